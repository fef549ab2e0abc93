//! `pan gradcheck`: central finite differences against the tape gradients,
//! every parameter of the configured model, in f64.

use pan_core::gradcheck::GradCheckConfig;
use pan_core::graph::Graph;
use pan_core::model::{assemble_batch, build};
use pan_core::synth::{synthesize, Sample};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub fn run(cfg: &RunConfig, eps: f64, tolerance: f64, max_elements: usize) -> Result<()> {
    let spec = cfg.synth_spec()?;
    cfg.check_model_matches_data()?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;

    let samples: Vec<Sample<f64>> = (0..2.min(spec.classes))
        .map(|c| synthesize(&spec, c, 0))
        .collect();
    let refs: Vec<&Sample<f64>> = samples.iter().collect();
    let batch = assemble_batch(&refs, &model_cfg)?;

    let mut model = build::<f64>(&model_cfg)?;
    let mut g = Graph::train();
    let out = model.forward(&mut g, &batch)?;
    let loss = {
        let ce = g.cross_entropy_mean(out.logits, &batch.labels);
        match out.align_penalty {
            Some(pen) => {
                let wa = g.scale(pen, train_cfg.w_alignment);
                g.add(ce, wa)
            }
            None => ce,
        }
    };
    let grads = g.backward(loss, &model.store)?;

    let mut probe = build::<f64>(&model_cfg)?;
    let mut loss_fn = |store: &pan_core::ParamStore<f64>| {
        probe
            .store
            .load_values_from(store)
            .expect("probe shares the architecture");
        let mut g = Graph::train();
        let out = probe.forward(&mut g, &batch).expect("probe forward");
        let ce = g.cross_entropy_mean(out.logits, &batch.labels);
        let l = match out.align_penalty {
            Some(pen) => {
                let wa = g.scale(pen, train_cfg.w_alignment);
                g.add(ce, wa)
            }
            None => ce,
        };
        g.value(l).item()
    };
    let checker = GradCheckConfig {
        eps,
        tolerance,
        max_elements_per_param: max_elements,
    };
    let rows = checker.check(&mut model.store, &grads, &mut loss_fn);

    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for row in &rows {
        worst = worst.max(row.max_rel_err);
        if row.max_rel_err > tolerance {
            failures.push(row);
        }
        if super::verbose() {
            eprintln!("{:<44} rel_err {:.3e}", row.name, row.max_rel_err);
        }
    }
    println!(
        "checked {} parameters, {} elements max each, eps {eps:.1e}",
        rows.len(),
        max_elements
    );
    println!("max relative error {worst:.3e} (tolerance {tolerance:.1e})");
    if failures.is_empty() {
        println!("gradcheck PASS");
        Ok(())
    } else {
        for f in &failures {
            eprintln!(
                "FAIL {} rel_err {:.3e} (analytic {:.6e}, fd {:.6e})",
                f.name, f.max_rel_err, f.worst_analytic, f.worst_fd
            );
        }
        Err(CliError::numeric(format!(
            "{} of {} parameters failed the finite-difference check",
            failures.len(),
            rows.len()
        )))
    }
}
