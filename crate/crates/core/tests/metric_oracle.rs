mod common;

use common::oracle;
use fdta::metrics::{clear_mota, evaluate, hota, idf1};
use fdta::rng::SimRng;

const TOL: f64 = 1e-12;

#[test]
fn metrics_match_exhaustive_oracles() {
    let mut rng = SimRng::new(2024);
    let mut switches = 0;
    for _ in 0..600 {
        let (gt, pred) = oracle::random_instance(&mut rng);
        let c = clear_mota(&gt, &pred, 0.5).unwrap();
        let oc = oracle::clear(&gt, &pred, 0.5);
        assert_eq!((c.tp, c.fp, c.fn_, c.idsw), (oc.tp, oc.fp, oc.fn_, oc.idsw));
        assert!((c.mota() - oracle::mota(&oc)).abs() < TOL);
        switches += oc.idsw;

        let i = idf1(&gt, &pred, 0.5).unwrap();
        let oi = oracle::identity(&gt, &pred, 0.5);
        assert_eq!((i.idtp, i.idfp, i.idfn), oi);
        assert!((i.idf1() - oracle::idf1(oi)).abs() < TOL);

        let h = hota(&gt, &pred).unwrap();
        let oh = oracle::hota(&gt, &pred);
        assert_eq!((h.tp.to_vec(), h.fp.to_vec(), h.fn_.to_vec()), (oh.tp.clone(), oh.fp.clone(), oh.fn_.clone()));
        let s = h.scores();
        assert!((s.hota - oh.hota).abs() < TOL, "{} vs {}", s.hota, oh.hota);
        assert!((s.det_a - oh.det_a).abs() < TOL);
        assert!((s.ass_a - oh.ass_a).abs() < TOL);
    }
    assert!(switches > 0, "generator never produced an id switch");
}

#[test]
fn hota_two_frame_switch_matches_oracle() {
    use fdta::geometry::Box2D;
    use fdta::tracker::TrackRecord;
    let b = Box2D { x: 0.0, y: 0.0, w: 10.0, h: 10.0 };
    let gt = [TrackRecord::new(1, 1, b, 1.0), TrackRecord::new(2, 1, b, 1.0)];
    let pred = [TrackRecord::new(1, 1, b, 1.0), TrackRecord::new(2, 2, b, 1.0)];
    let r = evaluate(&gt, &pred).unwrap();
    let o = oracle::hota(&gt, &pred);
    assert!((r.hota / 100.0 - o.hota).abs() < TOL);
    assert!((o.hota - 0.5f64.sqrt()).abs() < TOL);
}
