use serde::{Deserialize, Serialize};

use super::{SimError, ToolState};
use crate::controller::ToolGeometry;
use crate::spatial::Vec3;

/// Straight cylindrical laryngoscope channel.
///
/// The channel interior spans axial coordinates `[mouth_position, mouth_position + length]`
/// measured from `point` along `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaryngoscopeChannel {
    pub point: Vec3,
    pub direction: Vec3,
    pub radius: f64,
    pub length: f64,
    pub mouth_position: f64,
}

impl Default for LaryngoscopeChannel {
    fn default() -> Self {
        Self {
            point: Vec3::new(0.12, 0.0, 0.0),
            direction: Vec3::new(1.0, 0.0, 0.0),
            radius: 0.01,
            length: 0.15,
            mouth_position: 0.0,
        }
    }
}

impl LaryngoscopeChannel {
    /// Normalizes `direction` and checks the dimensions.
    pub fn validated(mut self) -> Result<Self, SimError> {
        let n = self.direction.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(SimError::InvalidModel("channel direction must be non-zero".into()));
        }
        self.direction /= n;
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(SimError::InvalidModel("channel radius must be positive".into()));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(SimError::InvalidModel("channel length must be positive".into()));
        }
        if !self.mouth_position.is_finite() || !self.point.iter().all(|c| c.is_finite()) {
            return Err(SimError::InvalidModel("channel position is not finite".into()));
        }
        Ok(self)
    }

    pub fn axial(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.direction)
    }

    pub fn radial(&self, p: &Vec3) -> f64 {
        let d = p - self.point;
        (d - self.direction * d.dot(&self.direction)).norm()
    }
}

/// Channel radius minus the largest radial deviation of the shaft section inside the
/// channel. Negative values mean the shaft intersects the wall. A shaft entirely outside
/// the channel reports the full radius.
pub fn channel_clearance(state: &ToolState, geom: &ToolGeometry, ch: &LaryngoscopeChannel) -> f64 {
    let tip_pose = state.world_tip(geom);
    let tip = tip_pose.translation;
    let base = tip - tip_pose.rotation.x_axis() * geom.shaft_length;
    let (lo, hi) = (ch.mouth_position, ch.mouth_position + ch.length);
    let (s0, s1) = (ch.axial(&base), ch.axial(&tip));

    // Radial distance along a segment is convex, so its maximum over the clipped
    // segment sits at one of the clipped endpoints.
    let (u0, u1) = if (s1 - s0).abs() < 1e-15 {
        if (lo..=hi).contains(&s0) {
            (0.0, 1.0)
        } else {
            return ch.radius;
        }
    } else {
        let a = (lo - s0) / (s1 - s0);
        let b = (hi - s0) / (s1 - s0);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let (u0, u1) = (a.max(0.0), b.min(1.0));
        if u0 > u1 {
            return ch.radius;
        }
        (u0, u1)
    };
    let at = |u: f64| base + (tip - base) * u;
    let worst = ch.radial(&at(u0)).max(ch.radial(&at(u1)));
    ch.radius - worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{RigidTransform, Rotation};
    use approx::assert_abs_diff_eq;

    fn setup() -> (ToolGeometry, LaryngoscopeChannel) {
        (
            ToolGeometry::default(),
            LaryngoscopeChannel::default().validated().unwrap(),
        )
    }

    #[test]
    fn on_axis_clearance_is_radius() {
        let (geom, ch) = setup();
        let s = ToolState::new(RigidTransform::identity());
        assert_abs_diff_eq!(channel_clearance(&s, &geom, &ch), ch.radius, epsilon = 1e-15);
    }

    #[test]
    fn parallel_offset() {
        let (geom, ch) = setup();
        for d in [0.001, 0.004, 0.0099, 0.012] {
            let s = ToolState::new(RigidTransform::from_translation(Vec3::new(0.0, 0.0, d)));
            assert_abs_diff_eq!(channel_clearance(&s, &geom, &ch), ch.radius - d, epsilon = 1e-15);
        }
    }

    #[test]
    fn outside_channel_reports_radius() {
        let (geom, ch) = setup();
        let s = ToolState::new(RigidTransform::from_translation(Vec3::new(-0.5, 0.3, 0.0)));
        assert_eq!(channel_clearance(&s, &geom, &ch), ch.radius);
    }

    #[test]
    fn pivot_sweep_matches_dense_sampling() {
        let (geom, ch) = setup();
        let pivot = ch.point + ch.direction * ch.mouth_position;
        for i in 0..=40 {
            let angle = (-10.0 + 0.5 * i as f64).to_radians();
            for axis in [Vec3::y(), Vec3::z(), Vec3::new(0.0, 1.0, 1.0).normalize()] {
                let r = Rotation::exp(&(axis * angle));
                // Shaft passes through the pivot with the tip `pivot_arm` beyond it.
                let tip = pivot + r.x_axis() * geom.pivot_arm;
                let ee = RigidTransform {
                    rotation: r,
                    translation: tip - r.x_axis() * geom.shaft_length,
                };
                let s = ToolState::new(ee);
                let got = channel_clearance(&s, &geom, &ch);

                let base = ee.translation;
                let n = 20_000;
                let worst = (0..=n)
                    .map(|k| base + (tip - base) * (k as f64 / n as f64))
                    .filter(|p| {
                        let s = ch.axial(p);
                        s >= ch.mouth_position && s <= ch.mouth_position + ch.length
                    })
                    .map(|p| ch.radial(&p))
                    .fold(0.0, f64::max);
                assert!((got - (ch.radius - worst)).abs() < 1e-6, "angle {angle}");
                // Tilt about the mouth: deepest point is the tip.
                let sagitta = geom.pivot_arm * angle.abs().sin();
                assert!(got >= ch.radius - sagitta - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_channel() {
        let ch = LaryngoscopeChannel {
            direction: Vec3::zeros(),
            ..Default::default()
        };
        assert!(ch.validated().is_err());
        let ch = LaryngoscopeChannel {
            radius: 0.0,
            ..Default::default()
        };
        assert!(ch.validated().is_err());
        let ch = LaryngoscopeChannel {
            direction: Vec3::new(0.0, 2.0, 0.0),
            ..Default::default()
        };
        assert_eq!(ch.validated().unwrap().direction, Vec3::y());
    }
}
