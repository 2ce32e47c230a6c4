//! Feature matching, robust rigid pose estimation, ICP refinement and the
//! error metrics used to evaluate them.

mod estimate;
mod features;
mod metrics;

use std::fmt::Write as _;

use crate::error::Result;
use crate::model::GraphiteModel;
use crate::pointcloud::{PointCloud, RigidPose};

pub use estimate::{icp_refine, kabsch, ransac_pose, IcpConfig, IcpOutcome, RansacConfig, RegistrationResult};
pub use features::{
    describe_cloud, features_to_text, load_features, match_features, parse_features, save_features, with_normals,
    DescribeConfig, Feature, Match,
};
pub use metrics::{
    aggregate_errors, inlier_fraction, pose_errors, pose_residuals, registration_recall, CorrespondenceSet,
    PoseErrors, RECALL_TAU1, RECALL_TAU2,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterConfig {
    pub describe: DescribeConfig,
    /// Keep only reciprocal nearest-neighbor matches.
    pub mutual: bool,
    pub ransac: RansacConfig,
    /// Refine with ICP over all points when set.
    pub icp: Option<IcpConfig>,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self {
            describe: DescribeConfig {
                score_threshold: Some(0.2),
                ..DescribeConfig::default()
            },
            mutual: true,
            ransac: RansacConfig::default(),
            icp: None,
        }
    }
}

impl RegisterConfig {
    /// Settings for small unit-cube objects of a few hundred points: 64-point
    /// patches, 300 per cloud, ICP on.
    pub fn objects() -> Self {
        let d = Self::default();
        Self {
            describe: DescribeConfig {
                patch_size: crate::patching::OBJECT_PATCH_SIZE,
                num_patches: 300,
                ..d.describe
            },
            icp: Some(IcpConfig::default()),
            ..d
        }
    }
}

/// Everything the pipeline produced for one cloud pair.
#[derive(Debug, Clone)]
pub struct Registration {
    pub features_p: Vec<Feature>,
    pub features_q: Vec<Feature>,
    pub matches: Vec<Match>,
    pub result: RegistrationResult,
}

/// Estimates the pose taking `p` onto `q`: describe both clouds, match
/// descriptors, RANSAC over keypoints, then optional ICP.
pub fn register_clouds(model: &GraphiteModel, p: &PointCloud, q: &PointCloud, cfg: &RegisterConfig) -> Result<Registration> {
    let features_p = describe_cloud(model, p, &cfg.describe)?;
    let features_q = describe_cloud(model, q, &cfg.describe)?;
    let matches = match_features(&features_p, &features_q, cfg.mutual);
    let kp: Vec<_> = features_p.iter().map(|f| f.keypoint).collect();
    let kq: Vec<_> = features_q.iter().map(|f| f.keypoint).collect();
    let mut result = ransac_pose(&matches, &kp, &kq, &cfg.ransac)?;
    if let Some(icp) = &cfg.icp {
        result.icp_refined = Some(icp_refine(p, q, &result.pose, icp)?.pose);
    }
    Ok(Registration {
        features_p,
        features_q,
        matches,
        result,
    })
}

impl Registration {
    /// Fills in the error metrics of the final pose.
    pub fn evaluate(&mut self, ground_truth: &RigidPose) {
        self.result.metrics = Some(pose_errors(self.result.final_pose(), ground_truth));
    }

    /// Fixed-order `key value...` lines.
    pub fn to_text(&self) -> String {
        let r = &self.result;
        let mut s = String::new();
        write_pose(&mut s, "", &r.pose);
        let _ = writeln!(s, "features_p {}", self.features_p.len());
        let _ = writeln!(s, "features_q {}", self.features_q.len());
        let _ = writeln!(s, "matches {}", self.matches.len());
        let _ = writeln!(s, "inliers {}", r.inliers.len());
        if let Some(icp) = &r.icp_refined {
            write_pose(&mut s, "icp_", icp);
        }
        if let Some(m) = &r.metrics {
            for (k, v) in [
                ("rot_mse", m.rot_mse),
                ("rot_rmse", m.rot_rmse),
                ("rot_mae", m.rot_mae),
                ("trans_mse", m.trans_mse),
                ("trans_rmse", m.trans_rmse),
                ("trans_mae", m.trans_mae),
            ] {
                let _ = writeln!(s, "{k} {v:?}");
            }
        }
        s
    }
}

fn write_pose(s: &mut String, prefix: &str, pose: &RigidPose) {
    let r: Vec<String> = pose.rotation().transpose().iter().map(|v| format!("{v:?}")).collect();
    let t = pose.translation();
    let _ = writeln!(s, "{prefix}rotation_matrix {}", r.join(" "));
    let _ = writeln!(s, "{prefix}translation {:?} {:?} {:?}", t.x, t.y, t.z);
}
