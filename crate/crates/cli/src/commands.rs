use std::fmt::Write as _;

use jpu_core::cost::{backbone_cost, compare_costs, BackboneSpec, CostMode};
use jpu_core::decomp::run_equivalence_suite;
use jpu_core::experiments::{
    bench_forward, synthetic_teacher, train_student, BenchMode, Method, MiniBackboneConfig, Student, TrainOptions,
};
use jpu_core::jointup::plant_and_recover;
use jpu_core::jpu::{save_params, JpuConfig};
use jpu_core::tensor::write_jt;
use jpu_core::{defaults, Error, Result, Tensor};
use serde_json::json;

use crate::{BenchArgs, CostArgs, CostModeArg, DTypeArg, EquivArgs, JointupArgs, Outcome, TrainArgs};

pub fn equiv(a: &EquivArgs) -> Result<Outcome> {
    let tol = a.tol.unwrap_or(match a.dtype {
        DTypeArg::F64 => defaults::EQUIV_TOL_F64,
        DTypeArg::F32 => defaults::EQUIV_TOL_F32,
    });
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be finite and >= 0, got {tol}")));
    }
    let report = match a.dtype {
        DTypeArg::F64 => run_equivalence_suite::<f64>(a.cases, a.seed, tol)?,
        DTypeArg::F32 => run_equivalence_suite::<f32>(a.cases, a.seed, tol)?,
    };
    let mut summary = format!("equiv {} seed {} tol {:e}\n", report.dtype, a.seed, tol);
    let f = &report.families;
    for (name, r) in [
        ("dilated_decomp", &f.dilated_decomp),
        ("stride_reduce", &f.stride_reduce),
        ("phase_consistency", &f.phase_consistency),
    ] {
        let verdict = if r.pass { "pass" } else { "FAIL" };
        writeln!(summary, "  {name:<18} {:>4} cases  max {:.3e}  {verdict}", r.cases, r.max_abs_diff).unwrap();
    }
    Ok(Outcome {
        ok: report.pass,
        report: json!({ "config": a, "report": report }),
        summary,
    })
}

fn jpu_for(spec: &BackboneSpec, width: usize) -> Result<JpuConfig> {
    let n = spec.stages.len();
    if n < 3 {
        return Err(Error::InvalidConfig("backbone has fewer than three stages".into()));
    }
    let ch = [
        spec.stages[n - 3].out_channels,
        spec.stages[n - 2].out_channels,
        spec.stages[n - 1].out_channels,
    ];
    let cfg = JpuConfig::new(ch, width);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cost(a: &CostArgs) -> Result<Outcome> {
    let spec = BackboneSpec::preset(&a.backbone)?;
    let hw = (a.input[0], a.input[1]);
    let jpu = jpu_for(&spec, a.jpu_width)?;
    let run = |mode| backbone_cost(&spec, mode, hw, Some(&jpu));
    let mut summary = format!("cost {} input {}x{}\n", spec.name, hw.0, hw.1);
    if !a.compare {
        let mode = match a.mode {
            CostModeArg::Dilated => CostMode::DilatedOs8,
            CostModeArg::Jpu => CostMode::StrideOs32PlusJpu,
        };
        let report = run(mode)?;
        writeln!(summary, "  mode {mode}").unwrap();
        for s in &report.stages {
            writeln!(summary, "  {:<6} {:>16} MACs", s.name, s.cost.macs).unwrap();
        }
        writeln!(summary, "  total  {:>16} MACs", report.total.macs).unwrap();
        return Ok(Outcome {
            ok: true,
            report: json!({ "config": a, "report": report }),
            summary,
        });
    }
    let dilated = run(CostMode::DilatedOs8)?;
    let strided = run(CostMode::StrideOs32PlusJpu)?;
    let table = compare_costs(&dilated, &strided, false)?;
    for r in &table.stages {
        let ratio = r.macs.ratio.map_or("-".to_string(), |x| format!("{x:.4}"));
        writeln!(summary, "  {:<6} {:>16} / {:>16} = {ratio}", r.name, r.macs.a, r.macs.b).unwrap();
    }
    let total = table.total_macs.ratio.unwrap_or(f64::NAN);
    writeln!(summary, "  total  {:>16} / {:>16} = {total:.4}", table.total_macs.a, table.total_macs.b).unwrap();
    Ok(Outcome {
        ok: true,
        report: json!({
            "config": a,
            "total_macs_ratio": total,
            "ratio": table,
            "dilated": dilated,
            "jpu": strided,
        }),
        summary,
    })
}

pub fn jointup_demo(a: &JointupArgs) -> Result<Outcome> {
    let r = plant_and_recover(a.seed)?;
    let ok = r.recovery_error <= defaults::JOINTUP_TOL && r.identity_error <= 1e-6 && r.scaling_error <= 1e-6;
    let summary = format!(
        "jointup-demo seed {}: recovery {:.3e}, identity {:.3e}, scaling {:.3e}, residual {:.3e}",
        a.seed, r.recovery_error, r.identity_error, r.scaling_error, r.residual
    );
    Ok(Outcome {
        ok,
        report: json!({ "config": a, "tolerance": defaults::JOINTUP_TOL, "report": r }),
        summary,
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn train_demo(a: &TrainArgs) -> Result<Outcome> {
    if a.seeds == 0 {
        return Err(Error::InvalidConfig("--seeds must be at least 1".into()));
    }
    let backbone = MiniBackboneConfig::default();
    let mut runs = vec![];
    let (mut bil, mut jpu) = (vec![], vec![]);
    let mut summary = String::from("train-demo\n");
    for seed in a.seed..a.seed + a.seeds as u64 {
        let ds = synthetic_teacher(seed, a.samples, &backbone, (a.input, a.input))?;
        let opts = TrainOptions {
            steps: a.steps,
            lr: a.lr,
            seed,
            width: a.width,
        };
        for method in [Method::Bilinear, Method::Jpu] {
            let (run, student) = train_student(method, &ds, &opts)?;
            if let (Some(dir), Student::Jpu { config, jpu, head }) = (&a.snapshot, &student) {
                let dir = dir.join(format!("seed{seed}"));
                save_params(&dir, config, jpu)?;
                write_jt(&head.weight, dir.join("head.weight.jt"))?;
                if let Some(b) = &head.bias {
                    write_jt(&Tensor::from_vec([b.len(), 1, 1, 1], b.clone())?, dir.join("head.bias.jt"))?;
                }
            }
            writeln!(summary, "  seed {seed} {method:<8} mse {:.5} -> {:.5}", run.initial_mse, run.final_mse).unwrap();
            match method {
                Method::Bilinear => bil.push(run.final_mse),
                Method::Jpu => jpu.push(run.final_mse),
            }
            runs.push(run);
        }
    }
    let (mb, mj) = (mean(&bil), mean(&jpu));
    writeln!(summary, "  mean final mse: bilinear {mb:.5}, jpu {mj:.5}").unwrap();
    Ok(Outcome {
        ok: true,
        report: json!({
            "config": a,
            "backbone": backbone,
            "mse_bilinear_mean": mb,
            "mse_jpu_mean": mj,
            "jpu_better": mj < mb,
            "runs": runs,
        }),
        summary,
    })
}

pub fn bench(a: &BenchArgs) -> Result<Outcome> {
    let config = MiniBackboneConfig {
        seed: a.seed,
        ..MiniBackboneConfig::default()
    };
    let hw = (a.input[0], a.input[1]);
    let dilated = bench_forward(&config, BenchMode::DilatedOs8, hw, a.repeats, a.warmup)?;
    let strided = bench_forward(&config, BenchMode::StrideOs32PlusJpu, hw, a.repeats, a.warmup)?;
    let summary = format!(
        "bench {}x{} ({} repeats): dilated {:.2} ms, stride+jpu {:.2} ms",
        hw.0, hw.1, a.repeats, dilated.mean_ms, strided.mean_ms
    );
    Ok(Outcome {
        ok: true,
        report: json!({
            "config": a,
            "backbone": config,
            "speedup": dilated.mean_ms / strided.mean_ms,
            "stride_jpu_faster": strided.mean_ms < dilated.mean_ms,
            "dilated": dilated,
            "jpu": strided,
        }),
        summary,
    })
}
