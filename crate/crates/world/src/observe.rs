use serde::{Deserialize, Serialize};

use vlnie_core::{Error, Observation, Pose, Result};

use crate::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserveConfig {
    /// Angular field of view in degrees; 360 is panoramic.
    pub fov_deg: f64,
    pub radius_m: f64,
}

impl Default for ObserveConfig {
    fn default() -> Self {
        ObserveConfig {
            fov_deg: 360.0,
            radius_m: 10.0,
        }
    }
}

/// Symbolic view from `pose`: the containing room plus every object within
/// range, inside the field of view and in line of sight, nearest first.
pub fn observe(scene: &Scene, pose: Pose, step: usize, config: &ObserveConfig) -> Result<Observation> {
    let here = pose.position;
    let room = scene.room_at(here).ok_or_else(|| {
        Error::Validation(format!(
            "pose ({:.2}, {:.2}) is outside every room of {}",
            here.x, here.y, scene.id
        ))
    })?;
    let facing = pose.direction();
    let half_fov = config.fov_deg.to_radians() / 2.0;
    let mut visible: Vec<(f64, &str)> = scene
        .objects
        .iter()
        .filter_map(|o| {
            let offset = o.position.sub(here);
            let dist = offset.norm();
            if dist > config.radius_m {
                return None;
            }
            if config.fov_deg < 360.0 && dist > 0.0 {
                let angle = facing.cross(offset).atan2(facing.dot(offset)).abs();
                if angle > half_fov {
                    return None;
                }
            }
            scene.segment_clear(here, o.position).then_some((dist, o.class.as_str()))
        })
        .collect();
    visible.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(Observation {
        step,
        pose,
        room_label: scene.rooms[room].label.clone(),
        object_labels: visible.into_iter().map(|(_, c)| c.to_string()).collect(),
    })
}
