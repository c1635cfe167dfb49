use nsk_cli::{CliError, Overrides, RunConfig};
use nsk_core::{Cycle, LinearMethod};

const MINIMAL: &str = "[params]\nnu = 0.1\nbeta = 1e-4\n";

#[test]
fn minimal_file_gets_documented_defaults() {
    let cfg = RunConfig::from_toml(MINIMAL).unwrap();
    assert_eq!(cfg.params.gamma_y, 1.0);
    assert_eq!(cfg.params.gamma_p, 0.0);
    assert_eq!(cfg.linear.tol, 1e-8);
    assert_eq!(cfg.linear.cycle, Cycle::TwoGrid);
    assert_eq!(cfg.linear.maxit, 1000);
    assert_eq!(cfg.seed, 7);
}

#[test]
fn both_tracking_weights_zero_is_rejected() {
    let err =
        RunConfig::from_toml("[params]\nnu = 0.1\nbeta = 1e-4\ngamma_y = 0.0\ngamma_p = 0.0\n")
            .unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("not both be zero"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_key_is_named() {
    let err =
        RunConfig::from_toml("[params]\nvisocsity = 0.1\nnu = 0.1\nbeta = 1e-4\n").unwrap_err();
    assert!(err.to_string().contains("visocsity"), "{err}");
}

#[test]
fn bad_values_are_rejected_with_their_key() {
    for (text, key) in [
        ("[params]\nnu = -1.0\nbeta = 1e-4\n", "nu"),
        ("[params]\nnu = 0.1\nbeta = 0.0\n", "beta"),
        (&format!("{MINIMAL}[linear]\ntol = 2.0\n"), "tol"),
        (
            &format!("{MINIMAL}[linear]\nmethod = \"mgcg\"\nbase = 12\n"),
            "base",
        ),
        (
            &format!("{MINIMAL}[linear]\nmethod = \"mgcg\"\nbase = 16\n"),
            "two_grid",
        ),
        (&format!("{MINIMAL}[spectral]\nns = [16, 24]\n"), "ns"),
    ] {
        let err = RunConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains(key), "{key}: {err}");
    }
}

#[test]
fn w_cycle_accepts_any_coarser_base() {
    let text = format!("{MINIMAL}[linear]\nmethod = \"mgcg\"\ncycle = \"w_cycle\"\nbase = 16\n");
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.precond().base_n, 16);
}

#[test]
fn emitted_config_parses_to_the_same_value() {
    let text = format!(
        "command = \"bench\"\nseed = 3\n{MINIMAL}gamma_p = 1e-3\n\
         [mesh]\nn0 = 8\nlevels = 4\nfirst_level = 1\n\
         [linear]\nmethod = \"mgcg\"\ncycle = \"w_cycle\"\nbase = 16\ninner = \"pcg\"\nbase_solver = \"kkt\"\n\
         [output]\ncsv = \"a.csv\"\njson = \"b.json\"\n\
         [bench]\nbeta = [1e-4, 1e-5]\n\
         [spectral]\nns = [8, 16]\ncontrol = \"minimizer\"\n\
         [mms]\nnu = 0.5\nconvective = false\nns = [4, 8]\n"
    );
    let cfg = RunConfig::from_toml(&text).unwrap();
    let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(cfg, again);
    let defaults = RunConfig::from_toml(MINIMAL).unwrap();
    assert_eq!(
        RunConfig::from_toml(&defaults.to_toml().unwrap()).unwrap(),
        defaults
    );
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, MINIMAL).unwrap();
    let o = Overrides {
        method: Some(LinearMethod::Mgcg),
        tol: Some(1e-6),
        beta: Some(1e-5),
        levels: Some(2),
        ..Overrides::default()
    };
    let cfg = RunConfig::load(&path, &o).unwrap();
    assert_eq!(cfg.linear.method, LinearMethod::Mgcg);
    assert_eq!(cfg.linear.tol, 1e-6);
    assert_eq!(cfg.params.beta, 1e-5);
    assert_eq!(cfg.base_n(), 16);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = RunConfig::load("/nonexistent/run.toml".as_ref(), &Overrides::default()).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("/nonexistent/run.toml"));
}
