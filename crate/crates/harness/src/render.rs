//! Map snapshots as PNG images.

use std::path::Path;

use graphprune_core::export::palette_image;
use graphprune_core::{ExplorationEnv, PruneDecision};
use graphprune_train::log::{read_log, Decision, Record};
use graphprune_train::TrainCheckpoint;
use image::{imageops, Rgb, RgbImage};

use crate::error::{HarnessError, Result};

/// The environment's current state, each cell drawn as a `scale` x `scale`
/// block.
pub fn snapshot(env: &ExplorationEnv, scale: u32) -> RgbImage {
    let (w, h) = (env.map.width() as u32, env.map.height() as u32);
    let px = palette_image(&env.map, &env.tree, &env.robot);
    let img = RgbImage::from_fn(w, h, |x, y| Rgb(px[(y * w + x) as usize]));
    match scale {
        0 | 1 => img,
        s => imageops::resize(&img, w * s, h * s, imageops::FilterType::Nearest),
    }
}

/// Re-executes one logged episode and returns its state after `steps` steps
/// (the whole logged episode when `None`).
pub fn episode_state(log: &Path, worker: usize, episode: u64, steps: Option<u32>) -> Result<ExplorationEnv> {
    let (header, records) = read_log(log)?;
    let mut env = None;
    for r in &records {
        let Record::Step(s) = r else { continue };
        if s.worker != worker || s.episode != episode {
            continue;
        }
        let env = env.get_or_insert(ExplorationEnv::new(header.sim.clone(), s.episode_seed)?);
        if steps.is_some_and(|n| env.steps() >= n) {
            break;
        }
        let gmm;
        let decision = match s.decision {
            Decision::Skip => PruneDecision::Skip,
            Decision::Random => PruneDecision::Random,
            Decision::Gmm => {
                let raw = s
                    .raw_action
                    .as_ref()
                    .ok_or_else(|| HarnessError::Invalid(format!("step {} has no action", s.global_step)))?;
                gmm = header.decode.decode(raw, (env.map.width(), env.map.height()));
                PruneDecision::Gmm(&gmm)
            }
        };
        env.step(decision)?;
    }
    let env = env.ok_or_else(|| {
        HarnessError::Invalid(format!("{}: no steps for worker {worker} episode {episode}", log.display()))
    })?;
    if let Some(n) = steps {
        if env.steps() < n {
            return Err(HarnessError::Invalid(format!(
                "episode has only {} logged steps, asked for {n}",
                env.steps()
            )));
        }
    }
    Ok(env)
}

/// Every worker's environment as captured in a training checkpoint.
pub fn checkpoint_states(path: &Path) -> Result<Vec<ExplorationEnv>> {
    Ok(TrainCheckpoint::load(path)?.workers.into_iter().map(|w| w.env).collect())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| HarnessError::Image {
        path: path.to_path_buf(),
        source,
    })
}
