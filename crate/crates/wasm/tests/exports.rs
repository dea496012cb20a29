use isobound_wasm::{bound_profile, keps_search, recover_demo};
use serde_json::Value;

fn parse(s: String) -> Value {
    let v: Value = serde_json::from_str(&s).unwrap();
    assert!(v.get("error").is_none(), "{v}");
    v
}

#[test]
fn profile_hits_63_at_1024() {
    let v = parse(bound_profile(1.0, 1.0, 1024.0, 1024.0, 1));
    let row = &v["rows"][0];
    assert_eq!(row["bound"], 63.0);
    assert_eq!(row["n_star"], 4);
    assert!(row["reference"].as_f64().unwrap() >= 63.0);
}

#[test]
fn profile_stays_below_reference() {
    for (m, l) in [(1.0, 0.1), (1.05, 2.0), (1.19, 0.0)] {
        let v = parse(bound_profile(m, l, 1.0, 1e6, 40));
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 40);
        for r in rows {
            let (b, reference) = (r["bound"].as_f64().unwrap(), r["reference"].as_f64().unwrap());
            assert!(b <= reference * (1.0 + 1e-12));
        }
    }
    // no closed-form reference outside the bi-Lipschitz regime
    let v = parse(bound_profile(1.5, 0.0, 1.0, 10.0, 3));
    assert!(v["rows"][0]["reference"].is_null());
}

#[test]
fn keps_search_brackets() {
    let v = parse(keps_search(0.1, 4, 500, 3));
    let ratio = v["instance"]["ratio"].as_f64().unwrap();
    assert!(ratio >= v["vestfrid_ratio"].as_f64().unwrap() - 1e-9);
    assert!(ratio <= 3.0);
    assert_eq!(v["curve"].as_array().unwrap().len(), 400);
    assert_eq!(keps_search(0.1, 4, 500, 3), keps_search(0.1, 4, 500, 3));
}

#[test]
fn recovery_demo_is_exact() {
    for seed in 0..5 {
        let v = parse(recover_demo(16, 0.03, seed));
        assert_eq!(v["exact"], true);
        assert_eq!(v["stability"]["pass"], true);
        assert!(v["stability"]["sup_ratio"].as_f64().unwrap() <= v["stability_limit"].as_f64().unwrap() + 1e-9);
    }
    let too_big: Value = serde_json::from_str(&recover_demo(16, 0.2, 1)).unwrap();
    assert!(too_big["error"].as_str().unwrap().contains("sqrt(16/15)"));
}
