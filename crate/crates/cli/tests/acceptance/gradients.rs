use merclip_core::ingest::Task;
use merclip_core::model::Model;
use merclip_core::params::{ParamGroup, ParamId};
use merclip_core::pipeline::build_model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{desk_config, fail, inputs, sample_loss, synthetic_split, Outcome};

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
const FLOOR: f64 = 1e-6;

pub fn group_params(model: &Model) -> Vec<(&'static str, Vec<ParamId>)> {
    let store = &model.store;
    let encoder_proj: Vec<ParamId> = store
        .iter()
        .filter(|(_, e)| {
            let tower = matches!(e.group, ParamGroup::Vision | ParamGroup::Language | ParamGroup::Audio);
            (tower && (e.name.ends_with(".proj") || e.name.ends_with(".text_projection"))) || e.group == ParamGroup::Projection
        })
        .map(|(id, _)| id)
        .collect();
    let prompts = [ParamGroup::LabelPrompt, ParamGroup::QueryPrompt]
        .iter()
        .flat_map(|&g| store.ids_in_group(g))
        .collect();
    vec![
        ("encoder projections", encoder_proj),
        ("CMD", store.ids_in_group(ParamGroup::Cmd)),
        ("prompt contexts", prompts),
        ("logit scale", vec![model.log_logit_scale]),
    ]
}

pub struct GradCheck {
    pub worst: f64,
    pub coords: usize,
    pub below_floor: usize,
}

/// Compares analytic gradients with central differences on `per_group`
/// random coordinates of every checked group.
pub fn check_model(model: &mut Model, input: &merclip_core::model::SampleInput, per_group: usize, seed: u64) -> Result<GradCheck, String> {
    let grads = model.loss_and_grads(&[input], 0).map_err(fail)?.grads;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = GradCheck {
        worst: 0.0,
        coords: 0,
        below_floor: 0,
    };
    for (name, ids) in group_params(model) {
        if ids.is_empty() {
            return Err(format!("no parameters in group `{name}`"));
        }
        for _ in 0..per_group {
            let id = ids[rng.random_range(0..ids.len())];
            let k = rng.random_range(0..model.store.value(id).len());
            let x0 = model.store.value(id).data()[k];
            model.store.value_mut(id).data_mut()[k] = x0 + STEP;
            let up = sample_loss(model, input);
            model.store.value_mut(id).data_mut()[k] = x0 - STEP;
            let down = sample_loss(model, input);
            model.store.value_mut(id).data_mut()[k] = x0;
            let fd = (up - down) / (2.0 * STEP);
            let an = grads.coord(id, k);
            let scale = an.abs().max(fd.abs());
            let rel = (an - fd).abs() / scale.max(FLOOR);
            if rel >= TOLERANCE {
                let pname = &model.store.entry(id).name;
                return Err(format!("{name}: `{pname}`[{k}] analytic {an:.6e} vs numeric {fd:.6e} (rel {rel:.2e})"));
            }
            res.worst = res.worst.max(rel);
            res.coords += 1;
            res.below_floor += usize::from(scale < FLOOR);
        }
    }
    Ok(res)
}

pub fn check_task(task: Task, overrides: &[String], per_group: usize, seed: u64) -> Result<GradCheck, String> {
    let cfg = desk_config(task, overrides)?;
    let split = synthetic_split(&cfg, 4, seed)?;
    let input = inputs(&cfg, &split)?
        .into_iter()
        .find(|s| s.included())
        .ok_or("no included sample")?;
    let mut model = build_model(&cfg).map_err(fail)?;
    check_model(&mut model, &input, per_group, seed)
}

pub fn run() -> Outcome {
    let mut parts = Vec::new();
    for (task, loss) in [(Task::Emotion, "BCE"), (Task::Sentiment, "CE")] {
        let r = check_task(task, &[], 20, 7).map_err(|e| format!("{loss}: {e}"))?;
        parts.push(format!("{loss} {} coords max rel {:.1e} ({} below floor)", r.coords, r.worst, r.below_floor));
    }
    Ok(parts.join("; "))
}
