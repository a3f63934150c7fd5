use icl_core::fl::FlMode;
use icl_core::mab::{EpsilonSchedule, MabMode};
use icl_harness::config::{parse_config, Backend, ConfigError, Emit, DEFAULT_OUTPUT};
use icl_harness::oracle::OracleCheck;

fn invalid_fields(text: &str) -> Vec<String> {
    match parse_config(text) {
        Err(e @ ConfigError::Invalid(_)) => e.fields().into_iter().map(String::from).collect(),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn minimal_mab_config_fills_defaults() {
    let cfg = parse_config("backend = \"mab\"\nseeds = [7]\n").unwrap();
    let Backend::Mab(m) = &cfg.backend else {
        panic!("wrong backend {:?}", cfg.backend)
    };
    assert_eq!(m.epsilon, EpsilonSchedule::Constant { epsilon: 0.1 });
    assert_eq!([m.pricing.b0, m.pricing.b1, m.pricing.b2], [1.0, 5.0, 10.0]);
    assert_eq!([m.pricing.kappa1, m.pricing.kappa2], [2.0, 4.0]);
    assert_eq!((m.arms, m.rounds), (50, 150));
    assert_eq!(m.mode, MabMode::Incentivized);
    assert_eq!(cfg.seeds, vec![7]);
    assert_eq!(cfg.emit, Emit::Both);
    assert_eq!(cfg.output, std::path::PathBuf::from(DEFAULT_OUTPUT));
}

#[test]
fn nested_sections_override_defaults() {
    let cfg = parse_config(
        r#"
backend = "fl"
seeds = [1, 2, 3]
output = "runs/fl"
emit = "csv"

[fl]
clients = 10
mode = "baseline"

[fl.pricing]
gamma = 11.0
"#,
    )
    .unwrap();
    let Backend::Fl(f) = &cfg.backend else { panic!() };
    assert_eq!(f.clients, 10);
    assert_eq!(f.mode, FlMode::Baseline);
    assert_eq!(f.pricing.gamma, 11.0);
    assert_eq!(cfg.emit, Emit::Csv);
    assert!(cfg.emit.csv() && !cfg.emit.json());
}

#[test]
fn rho_out_of_range_names_the_field() {
    let fields = invalid_fields("backend = \"fl\"\nseeds = [1]\n[fl.pricing]\nrho = 1.5\n");
    assert_eq!(fields.len(), 1, "{fields:?}");
    assert!(fields[0].ends_with("rho"), "{fields:?}");
}

#[test]
fn missing_seeds_is_a_validation_error() {
    assert_eq!(invalid_fields("backend = \"mab\"\n"), ["seeds"]);
    assert_eq!(invalid_fields("backend = \"mab\"\nseeds = []\n"), ["seeds"]);
    assert_eq!(invalid_fields("backend = \"mab\"\nseeds = [3, 3]\n"), ["seeds"]);
}

#[test]
fn every_error_is_reported() {
    let fields = invalid_fields(
        "backend = \"mab\"\n[mab]\narms = 0\ns_noise = -1.0\n[fl]\nclients = 3\n",
    );
    assert!(fields.contains(&"seeds".to_string()), "{fields:?}");
    assert!(fields.contains(&"fl".to_string()), "{fields:?}");
    assert!(fields.contains(&"mab.arms".to_string()), "{fields:?}");
    assert!(fields.contains(&"mab.s_noise".to_string()), "{fields:?}");
}

#[test]
fn parse_errors_carry_line_and_column() {
    match parse_config("backend = \"mab\"\nseeds = [1,\n  oops = 3\n") {
        Err(ConfigError::Parse { line, column, .. }) => {
            assert_eq!(line, 3);
            assert!(column >= 1);
        }
        other => panic!("{other:?}"),
    }
    match parse_config("backend = \"mab\"\nseeds = [1]\nbogus = 2\n") {
        Err(ConfigError::Parse { line, column, .. }) => assert_eq!((line, column), (3, 1)),
        other => panic!("{other:?}"),
    }
    match parse_config("backend = \"quantum\"\nseeds = [1]\n") {
        Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn oracle_defaults_and_overrides() {
    let cfg = parse_config("backend = \"oracle\"\nseeds = [0]\n").unwrap();
    let Backend::Oracle(o) = &cfg.backend else { panic!() };
    assert_eq!(o.nash_instances, 200);
    let cfg = parse_config(
        "backend = \"oracle\"\nseeds = [0]\n[oracle]\nchecks = [\"monotonicity\", \"selection\"]\n",
    )
    .unwrap();
    let Backend::Oracle(o) = &cfg.backend else { panic!() };
    assert_eq!(o.checks, [OracleCheck::Monotonicity, OracleCheck::Selection]);
}

#[test]
fn digest_ignores_output_but_tracks_parameters() {
    let a = parse_config("backend = \"mab\"\nseeds = [1]\noutput = \"x\"\n").unwrap();
    let b = parse_config("backend = \"mab\"\nseeds = [1]\noutput = \"y\"\n").unwrap();
    let c = parse_config("backend = \"mab\"\nseeds = [1]\n[mab]\narms = 49\n").unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_ne!(a.digest(), c.digest());
    assert_eq!(a.digest().len(), 64);
}

#[test]
fn seed_override_is_validated() {
    let cfg = parse_config("backend = \"mab\"\nseeds = [1]\n").unwrap();
    assert_eq!(cfg.clone().with_seeds(vec![4, 5]).unwrap().seeds, [4, 5]);
    assert!(matches!(cfg.clone().with_seeds(vec![]), Err(ConfigError::Invalid(_))));
    assert!(matches!(cfg.with_seeds(vec![2, 2]), Err(ConfigError::Invalid(_))));
}
