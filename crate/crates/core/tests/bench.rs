use std::sync::Mutex;

use dyndecomp::bench::*;
use dyndecomp::d2p::*;
use dyndecomp::envs::{collect_trajectories, env_step, preset, BlockEnvSpec, Transition, UniformRandomPolicy};
use ndarray::Array2;
use proptest::prelude::*;

fn data(spec: &BlockEnvSpec, episodes: usize, seed: u64) -> Vec<Transition> {
    let m = spec.action_dim();
    collect_trajectories(spec, &mut UniformRandomPolicy::new(m, seed), episodes, seed)
        .unwrap()
        .transitions
}

fn tiny_learner(spec: &BlockEnvSpec, batch: usize) -> TrainedModel {
    let cfg = D2PModelConfig {
        latent_width: 8,
        kernel_hidden: 8,
        decoder_hidden: 8,
        ..D2PModelConfig::new(spec.state_dim(), spec.action_dim(), KernelLayout::Decomposed(spec.ground_truth()))
    };
    TrainedModel::new(cfg, TrainConfig { batch, ..TrainConfig::default() }, 1).unwrap()
}

#[test]
fn schedule_validation() {
    let d = ExpandingSchedule::default();
    assert_eq!(d.fractions.len(), 10);
    assert_eq!(*d.fractions.last().unwrap(), 1.0);
    assert_eq!(d.steps_per_stage, 500);
    assert!(ExpandingSchedule::new(vec![], 1).is_err());
    assert!(ExpandingSchedule::new(vec![0.5, 0.5, 1.0], 1).is_err());
    assert!(ExpandingSchedule::new(vec![0.5, 0.9], 1).is_err());
    assert!(ExpandingSchedule::new(vec![0.0, 1.0], 1).is_err());
    assert!(ExpandingSchedule::new(vec![0.3, 1.0], 1).is_ok());
}

proptest! {
    #[test]
    fn stages_never_share_transitions(len in 1usize..5000, f in 0.001f64..=1.0, split in 0.01f64..0.99) {
        let (train, eval) = stage_split(len, f, split);
        prop_assert!(train.end <= eval.start);
        prop_assert!(eval.end <= len);
        prop_assert_eq!(train.start, 0);
    }
}

#[test]
fn oracle_error_is_numerical_noise() {
    let spec = preset("blocks-4x2-coupled").unwrap();
    let ts = data(&spec, 6, 3);
    let mut oracle = OracleModel::new(spec);
    let pc = ProtocolConfig {
        rollout_horizon: Some(5),
        ..ProtocolConfig::default()
    };
    let curve = expanding_error_protocol(&mut oracle, &ts, &ExpandingSchedule::default(), &pc, 0).unwrap();
    assert_eq!(curve.points.len(), 10);
    for p in &curve.points {
        assert!(p.mse < 1e-10);
        assert!(p.mse_rollout.unwrap() < 1e-10);
    }
    assert!(curve.points.windows(2).all(|w| w[1].step > w[0].step));
}

#[test]
fn single_stage_schedule_is_plain_train_eval() {
    let spec = preset("blocks-3x2").unwrap();
    let ts = data(&spec, 4, 0);
    let mut l = tiny_learner(&spec, 16);
    let schedule = ExpandingSchedule::new(vec![1.0], 20).unwrap();
    let curve = expanding_error_protocol(&mut l, &ts, &schedule, &ProtocolConfig::default(), 0).unwrap();
    assert_eq!(curve.points.len(), 1);
    assert_eq!(curve.points[0].step, 20);

    let mut fresh = tiny_learner(&spec, 16);
    fresh.fit(&ts[..160], 20).unwrap();
    assert_eq!(curve.points[0].mse, one_step_mse(&fresh, &ts[160..]).unwrap());
}

#[test]
fn protocol_is_reproducible() {
    let spec = preset("blocks-2x3").unwrap();
    let ts = data(&spec, 5, 1);
    let schedule = ExpandingSchedule::uniform(3, 10).unwrap();
    let run = || {
        let mut l = tiny_learner(&spec, 8);
        expanding_error_protocol(&mut l, &ts, &schedule, &ProtocolConfig::default(), 9).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn small_prefix_is_rejected() {
    let spec = preset("blocks-2x3").unwrap();
    let ts = data(&spec, 2, 1);
    let mut l = tiny_learner(&spec, 64);
    let err = expanding_error_protocol(&mut l, &ts, &ExpandingSchedule::default(), &ProtocolConfig::default(), 0);
    assert!(err.unwrap_err().to_string().contains("fewer than one batch"));
}

#[test]
fn unordered_data_is_rejected() {
    let spec = preset("blocks-2x3").unwrap();
    let mut ts = data(&spec, 2, 1);
    ts.swap(3, 4);
    let mut oracle = OracleModel::new(spec);
    assert!(expanding_error_protocol(&mut oracle, &ts, &ExpandingSchedule::default(), &ProtocolConfig::default(), 0).is_err());
}

/// Oracle that remembers every query.
struct Recording {
    inner: OracleModel,
    seen: Mutex<Vec<(Vec<f64>, Vec<f64>)>>,
    offset: f64,
}

impl Dynamics for Recording {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn predict(
        &self,
        h: Option<&Array2<f64>>,
        s: &Array2<f64>,
        a: &Array2<f64>,
    ) -> dyndecomp::Result<(Option<Array2<f64>>, Array2<f64>, Vec<f64>)> {
        for (sr, ar) in s.outer_iter().zip(a.outer_iter()) {
            self.seen.lock().unwrap().push((sr.to_vec(), ar.to_vec()));
        }
        let (h2, s2, r) = self.inner.predict(h, s, a)?;
        Ok((h2, s2 + self.offset, r))
    }
}

#[test]
fn one_step_horizon_matches_one_step_mse() {
    let spec = preset("blocks-2x3").unwrap();
    let model = Recording {
        inner: OracleModel::new(spec.clone()),
        seen: Mutex::new(Vec::new()),
        offset: 0.01,
    };
    let per_step = multistep_error(&model, &spec, 1, 30, 4).unwrap();
    let pairs: Vec<Transition> = model
        .seen
        .lock()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(t, (s, a))| Transition {
            episode_id: t as u64,
            t: 0,
            s: s.clone(),
            a: a.clone(),
            r: 0.0,
            s_next: env_step(&spec, s, a).unwrap().0,
        })
        .collect();
    assert_eq!(pairs.len(), 30);
    model.seen.lock().unwrap().clear();
    let direct = one_step_mse(&model, &pairs).unwrap();
    assert!((per_step[0] - direct).abs() < 1e-15, "{} vs {direct}", per_step[0]);
}

#[test]
fn oracle_multistep_error_is_zero() {
    let spec = preset("blocks-3x2").unwrap();
    let errs = multistep_error(&OracleModel::new(spec.clone()), &spec, 8, 10, 0).unwrap();
    assert_eq!(errs, vec![0.0; 8]);
    assert!(multistep_error(&OracleModel::new(spec.clone()), &spec, 0, 10, 0).is_err());
}

#[test]
fn trained_rollout_error_grows_with_horizon() {
    let spec = preset("blocks-2x3").unwrap();
    let ts = data(&spec, 40, 0);
    let mut model = WorldModel::new(D2PModelConfig::new(12, 6, KernelLayout::Decomposed(spec.ground_truth())), 0).unwrap();
    train_model(&mut model, &ts, &TrainConfig { steps: 3000, ..TrainConfig::default() }, 0).unwrap();
    let errs = multistep_error(&model, &spec, 10, 50, 7).unwrap();
    assert!(errs.windows(2).all(|w| w[1] >= w[0]), "{errs:?}");
}

fn curve(label: &str, seed: u64, finals: &[f64]) -> ErrorCurve {
    ErrorCurve {
        label: label.into(),
        seed,
        points: finals
            .iter()
            .enumerate()
            .map(|(i, &mse)| ErrorPoint {
                step: 100 * (i + 1),
                mse,
                mse_rollout: None,
            })
            .collect(),
    }
}

#[test]
fn report_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let files = comparison_report(&[curve("mono", 3, &[0.25])], dir.path()).unwrap();
    let csv = std::fs::read_to_string(&files.curves_csv).unwrap();
    assert_eq!(csv, "label,seed,step,mse,mse_rollout\nmono,3,100,2.5e-1,\n");
    let back = read_final_mse(&csv).unwrap();
    assert_eq!(back[&("mono".to_string(), 3)], 0.25);
}

#[test]
fn report_summary_std_by_hand() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [0.5, 0.5, 0.5, 0.5, 2.5];
    let mut curves = Vec::new();
    for (seed, (x, y)) in a.iter().zip(&b).enumerate() {
        curves.push(curve("a", seed as u64, &[9.0, *x]));
        curves.push(curve("b", seed as u64, &[9.0, *y]));
    }
    let dir = tempfile::tempdir().unwrap();
    let files = comparison_report(&curves, dir.path()).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(files.summary_json).unwrap()).unwrap();
    assert_eq!(summary.as_object().unwrap().len(), 2);
    // population std: sqrt(((-2)^2 + 1 + 0 + 1 + 4) / 5) = sqrt(2)
    assert!((summary["a"]["std"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(summary["a"]["mean_final_mse"].as_f64().unwrap(), 3.0);
    // mean 0.9; deviations -0.4 x4, 1.6 -> var (4*0.16 + 2.56)/5 = 0.64
    assert!((summary["b"]["std"].as_f64().unwrap() - 0.8).abs() < 1e-12);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(files.manifest_json).unwrap()).unwrap();
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
}

#[test]
fn report_rejects_empty() {
    let dir = tempfile::tempdir().unwrap();
    assert!(comparison_report(&[], dir.path()).is_err());
}
