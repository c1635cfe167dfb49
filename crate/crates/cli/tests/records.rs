use nsk_cli::output::{bench_runs, efficiencies_from_rows, parse_csv, to_csv, CSV_HEADER};
use nsk_cli::{run, Command, Outcome, RunConfig, RunRecord};

fn solve_config() -> RunConfig {
    RunConfig::from_toml(
        "[params]\nnu = 0.1\nbeta = 1e-4\ngamma_p = 1e-3\n[mesh]\nn0 = 4\nlevels = 2\n",
    )
    .unwrap()
}

#[test]
fn empty_record_list_gives_header_only_csv() {
    assert_eq!(to_csv(&[]), format!("{CSV_HEADER}\n"));
}

#[test]
fn solve_rows_parse_back_losslessly() {
    let outcome = run(Command::Solve, &solve_config()).unwrap();
    let runs = outcome.runs();
    assert_eq!(runs.len(), 2);
    let rows = parse_csv(&to_csv(&runs)).unwrap();
    let steps: Vec<_> = runs
        .iter()
        .flat_map(|r| r.report.steps.iter().map(move |s| (r, s)))
        .collect();
    assert_eq!(rows.len(), steps.len());
    for (row, (rec, step)) in rows.iter().zip(steps) {
        assert_eq!(row.params, rec.params);
        assert_eq!(row.level, rec.report.n);
        assert_eq!(row.newton_iter, step.iteration);
        assert_eq!(row.lin_iters, step.lin_iters);
        assert_eq!(row.grad_inf.to_bits(), step.grad_inf.to_bits());
        assert_eq!(row.lin_time_s.to_bits(), step.lin_time_s.to_bits());
        assert_eq!(row.total_time_s.to_bits(), step.elapsed_s.to_bits());
        assert_eq!(row.status, rec.report.status);
    }
}

#[test]
fn json_round_trips_records() {
    let runs = run(Command::Solve, &solve_config()).unwrap().runs();
    let text = serde_json::to_string(&runs).unwrap();
    let back: Vec<RunRecord> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, runs);
}

#[test]
fn reaggregated_bench_csv_reproduces_efficiency() {
    let cfg = RunConfig::from_toml(
        "[params]\nnu = 0.1\nbeta = 1e-3\n[mesh]\nn0 = 4\nlevels = 3\n[bench]\ngamma_p = [0.0, 1e-3]\n",
    )
    .unwrap();
    let Outcome::Bench { records } = run(Command::Bench, &cfg).unwrap() else {
        panic!("bench outcome expected");
    };
    assert_eq!(records.len(), 2);
    let rows = parse_csv(&to_csv(&bench_runs(&records))).unwrap();
    let again = efficiencies_from_rows(&rows);
    assert_eq!(again.len(), records.len());
    for (rec, (params, eff)) in records.iter().zip(again) {
        assert_eq!(rec.case.params, params);
        let (a, b) = (rec.efficiency.unwrap(), eff.unwrap());
        assert!((a - b).abs() <= 1e-9 * a, "{a} {b}");
    }
}

#[test]
fn failed_write_names_the_path() {
    let err = nsk_cli::output::write_text("/proc/nsk/x.csv".as_ref(), "x").unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains("/proc/nsk"));
}
