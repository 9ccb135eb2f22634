#include "viewdistill/geometry.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "viewdistill/errors.hpp"

namespace viewdistill {

double orthonormality_error(const Eigen::Matrix3d& r) {
  const Eigen::Matrix3d residual =
      r.transpose() * r - Eigen::Matrix3d::Identity();
  return residual.cwiseAbs().maxCoeff();
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& r) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

Eigen::Matrix3d checked_rotation(const Eigen::Matrix3d& r, double repair_tol) {
  if (!r.allFinite())
    throw ValidationError("rotation has non-finite entries");
  const double err = orthonormality_error(r);
  if (err > repair_tol) {
    std::ostringstream msg;
    msg << "rotation is not orthonormal (max residual " << err << ")";
    throw ValidationError(msg.str());
  }
  if (r.determinant() < 0.0)
    throw ValidationError("rotation is a reflection (det < 0)");
  if (err <= 1e-9) return r;
  return nearest_rotation(r);
}

Pose invert_pose(const Pose& pose) {
  Pose out;
  out.rotation = pose.rotation.transpose();
  out.translation = -(pose.rotation.transpose() * pose.translation);
  out.frame = pose.frame == Frame::CameraFromWorld ? Frame::WorldFromCamera
                                                   : Frame::CameraFromWorld;
  return out;
}

Pose to_world(const Pose& pose) {
  if (pose.frame != Frame::CameraFromWorld)
    throw ValidationError("to_world: pose is already WorldFromCamera");
  return invert_pose(pose);
}

Eigen::Vector3d gaze_vector(const Pose& world_pose, GazeAxis axis) {
  if (world_pose.frame != Frame::WorldFromCamera)
    throw ValidationError("gaze_vector: pose must be WorldFromCamera");
  const Eigen::Vector3d forward = world_pose.rotation.col(2);
  return axis == GazeAxis::PlusZ ? forward : Eigen::Vector3d(-forward);
}

std::optional<Pose> PoseTrack::at(int64_t t) const {
  const auto it = std::lower_bound(timestamps.begin(), timestamps.end(), t);
  if (it == timestamps.end() || *it != t) return std::nullopt;
  return poses[static_cast<size_t>(it - timestamps.begin())];
}

}  // namespace viewdistill
