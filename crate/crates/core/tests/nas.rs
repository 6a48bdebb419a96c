use rand::Rng;

use help_core::archspace::{enumerate_cells, Architecture, SearchSpace};
use help_core::devicesim::{generate_pool, DeviceProfile, PoolConfig};
use help_core::metalearn::OraclePredictor;
use help_core::nas::{
    evolutionary_search, exhaustive_search, is_dominated, pareto_sweep, AccuracyModel,
    AccuracyTable, CellScan, EvolutionConfig, NasError, SyntheticAccuracy, SWEEP_CSV_HEADER,
};
use help_core::rng;

fn device() -> DeviceProfile {
    generate_pool(&PoolConfig::default(), 4, 5)
        .unwrap()
        .profiles()
        .next()
        .unwrap()
        .clone()
}

/// Accuracies rounded to one decimal so that ties occur.
fn random_table(seed: u64) -> AccuracyTable {
    let mut r = rng::rng(seed);
    let rows: Vec<(Architecture, f64)> = enumerate_cells()
        .map(|c| {
            (
                Architecture::Cell(c),
                (r.random_range(0.0..100.0f64) * 10.0).round() / 10.0,
            )
        })
        .collect();
    AccuracyTable::from_entries(SearchSpace::Cell, rows).unwrap()
}

/// Highest accuracy, then lowest latency, then smallest ops among
/// architectures whose true latency fits.
fn brute_force(
    acc: &dyn AccuracyModel,
    dev: &DeviceProfile,
    archs: &[Architecture],
    c: f64,
) -> Option<Architecture> {
    let mut fits: Vec<(f64, f64, Architecture)> = archs
        .iter()
        .map(|a| (acc.accuracy(a).unwrap(), dev.true_latency(a).unwrap(), *a))
        .filter(|x| x.1 <= c)
        .collect();
    fits.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.ops().cmp(y.2.ops()))
    });
    fits.first().map(|x| x.2)
}

#[test]
fn oracle_exhaustive_search_finds_the_constrained_optimum() {
    let dev = device();
    let all: Vec<Architecture> = enumerate_cells().map(Architecture::Cell).collect();
    let lat: Vec<f64> = all.iter().map(|a| dev.true_latency(a).unwrap()).collect();
    let (lo, hi) = lat
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
    let mut r = rng::rng(1);
    for trial in 0..10 {
        let table = random_table(trial);
        let scan = CellScan::new(&OraclePredictor(&dev), &table).unwrap();
        let c = r.random_range(lo..hi);
        let got = scan.search(&dev, c).unwrap();
        assert_eq!(
            got.arch,
            brute_force(&table, &dev, &all, c),
            "trial {trial}, constraint {c}"
        );
        assert!(got.true_ms.unwrap() <= c);
        assert_eq!(got.evaluated, 15625);
    }
}

#[test]
fn constraint_below_the_fastest_architecture_gives_an_empty_result() {
    let dev = device();
    let acc = AccuracyTable::Synthetic(SyntheticAccuracy::new(SearchSpace::Cell, 0));
    let fastest = enumerate_cells()
        .map(|c| dev.true_latency(&Architecture::Cell(c)).unwrap())
        .fold(f64::INFINITY, f64::min);
    let res = exhaustive_search(&OraclePredictor(&dev), &acc, &dev, fastest * 0.5).unwrap();
    assert!(res.is_empty());
    assert!(res.diagnostics.unwrap().contains("fastest"));
}

#[test]
fn evolution_over_three_free_positions_matches_brute_force() {
    let dev = device();
    let acc = AccuracyTable::Synthetic(SyntheticAccuracy::new(SearchSpace::Cell, 3));
    let base = Architecture::from_ops(SearchSpace::Cell, &[3, 2, 1, 3, 0, 2]).unwrap();
    let free = vec![0, 2, 5];
    let sub: Vec<Architecture> = (0..125u8)
        .map(|k| {
            let mut ops = base.ops().to_vec();
            ops[0] = k % 5;
            ops[2] = k / 5 % 5;
            ops[5] = k / 25;
            Architecture::from_ops(SearchSpace::Cell, &ops).unwrap()
        })
        .collect();
    let mut lat: Vec<f64> = sub.iter().map(|a| dev.true_latency(a).unwrap()).collect();
    lat.sort_by(f64::total_cmp);
    for seed in 0..3 {
        let c = lat[40 + 20 * seed as usize];
        let cfg = EvolutionConfig {
            population: 16,
            tournament: 4,
            budget: 600,
            seed,
            free_positions: Some(free.clone()),
            base: Some(base),
        };
        let got = evolutionary_search(
            SearchSpace::Cell,
            &OraclePredictor(&dev),
            &acc,
            &dev,
            c,
            &cfg,
        )
        .unwrap();
        assert_eq!(got.arch, brute_force(&acc, &dev, &sub, c), "seed {seed}");
        assert_eq!(got.evaluated, 600);
        let again = evolutionary_search(
            SearchSpace::Cell,
            &OraclePredictor(&dev),
            &acc,
            &dev,
            c,
            &cfg,
        )
        .unwrap();
        assert_eq!(again.arch, got.arch);
    }
}

#[test]
fn evolution_budget_equal_to_population_only_samples() {
    let dev = device();
    let acc = AccuracyTable::Synthetic(SyntheticAccuracy::new(SearchSpace::Cell, 0));
    let cfg = EvolutionConfig {
        population: 10,
        tournament: 3,
        budget: 10,
        ..EvolutionConfig::default()
    };
    let res = evolutionary_search(
        SearchSpace::Cell,
        &OraclePredictor(&dev),
        &acc,
        &dev,
        f64::MAX,
        &cfg,
    )
    .unwrap();
    assert_eq!(res.evaluated, 10);
    let small = EvolutionConfig { budget: 9, ..cfg };
    assert!(matches!(
        evolutionary_search(
            SearchSpace::Cell,
            &OraclePredictor(&dev),
            &acc,
            &dev,
            1.0,
            &small
        ),
        Err(NasError::Config(_))
    ));
}

struct NegativeMacs;

impl AccuracyModel for NegativeMacs {
    fn space(&self) -> SearchSpace {
        SearchSpace::Cell
    }
    fn accuracy(&self, a: &Architecture) -> Result<f64, NasError> {
        Ok(-(a.macs() as f64))
    }
}

#[test]
fn custom_accuracy_models_drive_the_search() {
    let dev = device();
    let res = exhaustive_search(&OraclePredictor(&dev), &NegativeMacs, &dev, f64::MAX).unwrap();
    let min_macs = enumerate_cells()
        .map(|c| Architecture::Cell(c).macs())
        .min()
        .unwrap();
    assert_eq!(res.arch.unwrap().macs(), min_macs);
}

#[test]
fn oracle_sweep_lands_on_the_true_frontier() {
    let dev = device();
    let acc = AccuracyTable::Synthetic(SyntheticAccuracy::new(SearchSpace::Cell, 1));
    let fr = help_core::nas::true_frontier(&acc, &dev).unwrap();
    let constraints: Vec<f64> = fr
        .iter()
        .step_by(fr.len().div_ceil(8))
        .map(|p| p.0 * 1.001)
        .collect();
    let sweep = pareto_sweep(&OraclePredictor(&dev), &acc, &dev, &constraints).unwrap();
    for r in &sweep.results {
        assert!(!is_dominated(
            &sweep.frontier,
            r.true_ms.unwrap(),
            r.accuracy.unwrap()
        ));
    }
    let empty = pareto_sweep(&OraclePredictor(&dev), &acc, &dev, &[]).unwrap();
    assert_eq!(empty.to_csv(), format!("{SWEEP_CSV_HEADER}\n"));
}

#[test]
fn accuracy_tables_round_trip_and_validate() {
    let table = random_table(9);
    let archs: Vec<Architecture> = enumerate_cells().take(50).map(Architecture::Cell).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc.jsonl");
    table.save(&path, &archs).unwrap();
    let back = AccuracyTable::load(&path).unwrap();
    for a in &archs {
        assert_eq!(back.accuracy(a).unwrap(), table.accuracy(a).unwrap());
    }
    let outside = enumerate_cells().nth(60).map(Architecture::Cell).unwrap();
    assert!(matches!(
        back.accuracy(&outside),
        Err(NasError::MissingAccuracy(_))
    ));
    let bad = r#"{"arch": {"space": "cell", "ops": [0,0,0,0,0,0]}, "accuracy": 101.0}"#;
    assert!(matches!(
        AccuracyTable::parse_jsonl(bad, "t"),
        Err(NasError::InvalidAccuracy { .. })
    ));
    let garbled = AccuracyTable::parse_jsonl("\n{not json", "t").unwrap_err();
    assert!(garbled.to_string().starts_with("t:2:"), "{garbled}");
}
