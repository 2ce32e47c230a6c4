use super::*;

fn parse(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("graphite").chain(args.iter().copied())).unwrap()
}

fn run_capture(args: &[&str]) -> (std::result::Result<(), RunError>, String) {
    let mut out = Vec::new();
    let r = run_args(std::iter::once("graphite").chain(args.iter().copied()), &mut out);
    (r, String::from_utf8(out).unwrap())
}

#[test]
fn default_config_round_trips_through_toml() {
    let c = RunConfig::default();
    assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    assert_eq!(RunConfig::from_toml("").unwrap(), c);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(RunConfig::from_toml("[register]\nnum_patchs = 3\n").is_err());
    assert!(RunConfig::from_toml("[nonsense]\n").is_err());
    assert!(RunConfig::from_toml("[train]\nlr = 0.1\n").is_ok());
}

#[test]
fn flags_override_the_file_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.toml");
    std::fs::write(&file, "[register]\nnum_patches = 7\nransac_iterations = 11\n").unwrap();
    let f = file.to_str().unwrap();
    let args = ["--config", f, "register", "m", "p.xyz", "q.xyz", "--num-patches", "9", "--icp", "--print-config"];
    let (r, printed) = run_capture(&args);
    r.unwrap();
    let c = RunConfig::from_toml(&printed).unwrap();
    assert_eq!(c.register.num_patches, 9);
    assert_eq!(c.register.ransac_iterations, 11);
    assert!(c.register.icp);

    // the printed file alone reproduces the merged settings
    std::fs::write(&file, &printed).unwrap();
    let (r, again) = run_capture(&["--config", f, "register", "m", "p.xyz", "q.xyz", "--print-config"]);
    r.unwrap();
    assert_eq!(again, printed);
}

#[test]
fn every_pipeline_flag_reaches_the_register_config() {
    let cli = parse(&[
        "register", "m", "p", "q", "-n", "50", "--num-patches", "20", "--score-threshold", "0", "--seed", "3",
        "--ransac-iterations", "100", "--inlier-threshold", "0.5", "--ransac-seed", "8", "--icp",
        "--icp-max-iterations", "4", "--no-mutual",
    ]);
    let mut c = RunConfig::default();
    c.apply(&cli.command);
    let r = c.register.to_config();
    assert_eq!(r.describe.patch_size, 50);
    assert_eq!(r.describe.num_patches, 20);
    assert_eq!(r.describe.score_threshold, None);
    assert_eq!(r.describe.seed, 3);
    assert_eq!(r.ransac.iterations, 100);
    assert_eq!(r.ransac.inlier_threshold, 0.5);
    assert_eq!(r.ransac.seed, 8);
    assert_eq!(r.icp.unwrap().max_iterations, 4);
    assert!(!r.mutual);
}

#[test]
fn register_section_defaults_match_the_library() {
    assert_eq!(RegisterSection::default().to_config(), RegisterConfig::default());
    assert_eq!(PatchSection::default().to_config(), DescribeConfig::default());
}

#[test]
fn train_flags_set_the_train_section() {
    let cli = parse(&["train", "data", "--out", "m.ckpt", "--stage", "pose", "--epochs", "3", "--lr", "0.01", "--seed", "5"]);
    let mut c = RunConfig::default();
    c.apply(&cli.command);
    assert_eq!(c.train.stage, Stage::Pose);
    assert_eq!(c.train.epochs(), 3);
    assert_eq!(c.train.lr, 0.01);
    assert_eq!(c.train.seed, 5);
}

#[test]
fn errors_map_to_exit_codes() {
    let (r, _) = run_capture(&["register"]);
    assert_eq!(r.unwrap_err().exit_code(), 2);
    let (r, _) = run_capture(&["--help"]);
    assert_eq!(r.unwrap_err().exit_code(), 0);
    assert_eq!(exit_code(&Error::Config("x".into())), 2);
    assert_eq!(exit_code(&Error::EmptyCloud), 3);
    assert_eq!(exit_code(&Error::Degenerate("x".into())), 4);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[describe]\ntypo = 1\n").unwrap();
    let (r, _) = run_capture(&["--config", bad.to_str().unwrap(), "describe", "m", "c.xyz"]);
    assert_eq!(r.unwrap_err().exit_code(), 2);
}

#[test]
fn describe_rejects_an_empty_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    crate::model::save_checkpoint(&GraphiteModel::init(1), &ckpt).unwrap();
    let cloud = dir.path().join("empty.xyz");
    std::fs::write(&cloud, "").unwrap();
    let (r, _) = run_capture(&["describe", ckpt.to_str().unwrap(), cloud.to_str().unwrap()]);
    let e = r.unwrap_err();
    assert!(matches!(e, RunError::Pipeline(Error::EmptyCloud)), "{e:?}");
    assert_eq!(e.exit_code(), 3);
}
