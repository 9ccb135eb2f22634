#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

namespace viewdistill {

// Which direction a pose maps. Calibration and trajectory files store
// CameraFromWorld (x_cam = R x_world + t); ranking math runs on
// WorldFromCamera where the translation is the camera center and the
// rotation columns are the camera axes expressed in world coordinates.
enum class Frame { CameraFromWorld, WorldFromCamera };

// Camera forward axis convention. PlusZ is the default; MinusZ flips
// the optical axis for rigs calibrated the other way around.
enum class GazeAxis { PlusZ, MinusZ };

struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Frame frame = Frame::CameraFromWorld;
};

// Max-norm of R^T R - I.
double orthonormality_error(const Eigen::Matrix3d& r);

// Nearest rotation in Frobenius norm (SVD projection), det forced to +1.
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& r);

// Checks a parsed rotation: drift up to `repair_tol` is projected back
// onto SO(3); anything worse is rejected. Returned matrix is
// orthonormal to 1e-9.
Eigen::Matrix3d checked_rotation(const Eigen::Matrix3d& r,
                                 double repair_tol = 1e-3);

// Inverse pose: [R|t] -> [R^T | -R^T t], frame tag flipped.
Pose invert_pose(const Pose& pose);

// CameraFromWorld -> WorldFromCamera. Rejects a pose already in world
// form so a double conversion cannot slip through silently.
Pose to_world(const Pose& pose);

// Unit gaze direction in world coordinates: the camera's forward axis,
// i.e. the +/-Z column of the WorldFromCamera rotation.
Eigen::Vector3d gaze_vector(const Pose& world_pose, GazeAxis axis);

// Ego pose samples keyed by integer seconds, strictly increasing.
struct PoseTrack {
  std::vector<int64_t> timestamps;
  std::vector<Pose> poses;  // CameraFromWorld, aligned with timestamps

  std::optional<Pose> at(int64_t t) const;
};

}  // namespace viewdistill
