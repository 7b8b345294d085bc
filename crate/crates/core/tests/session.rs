use tlbo_core::{ParamBox, Phase, Proposal, Session, SessionConfig, TaskDataset};

fn source(id: &str, center: f64, scale: f64) -> TaskDataset {
    let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![20.0 + i as f64 * 60.0 / 19.0]).collect();
    let ys = xs.iter().map(|x| scale * ((x[0] - center) / 10.0).powi(2) + 1.0).collect();
    TaskDataset::new(id, xs, ys).unwrap()
}

#[test]
fn converges_on_a_shifted_target() {
    let target = |x: f64| 2.0 * ((x - 57.0) / 10.0).powi(2) + 0.5;
    let mut cfg = SessionConfig::new(ParamBox::new(vec![20.0], vec![80.0]).unwrap());
    cfg.seed = 21;
    cfg.stop.max_iterations = 8;
    let mut s = Session::create(vec![source("a", 50.0, 1.0), source("b", 55.0, 3.0)], cfg).unwrap();

    let mut suggestions = 0;
    while s.phase() != Phase::Stopped {
        let p = s.propose().unwrap();
        let x = p.x().to_vec();
        if let Proposal::Suggestion(sug) = &p {
            suggestions += 1;
            assert!((sug.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((20.0..=80.0).contains(&x[0]));
        }
        s.tell(&x, Some(target(x[0])), false).unwrap();
    }
    assert_eq!(suggestions, 8);
    assert_eq!(s.history().len(), 10);
    let (xb, yb) = s.best_so_far().unwrap();
    assert!(yb < 0.5 + 0.05, "best {yb} at {xb:?}");
    assert!(s.tell(&[50.0], Some(1.0), false).is_err());
}

#[test]
fn snapshot_round_trip_preserves_history() {
    let cfg = SessionConfig::new(ParamBox::new(vec![20.0], vec![80.0]).unwrap());
    let mut s = Session::create(vec![source("a", 50.0, 1.0)], cfg).unwrap();
    for x in [50.0, 53.0, 61.0] {
        s.tell(&[x], Some((x - 60.0).abs()), false).unwrap();
    }
    let back = Session::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(back.history(), s.history());
    assert_eq!(back.phase(), Phase::Running);
    assert!(Session::from_json("{\"config\": 1}").is_err());
}
