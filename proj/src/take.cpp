#include "viewdistill/take.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "viewdistill/errors.hpp"

namespace viewdistill {

const FeatureStream* Take::stream_for(int view_id) const {
  for (const FeatureStream& s : streams)
    if (s.view_id == view_id) return &s;
  return nullptr;
}

void validate_take(const Take& take) {
  if (take.duration_s <= 0)
    throw ValidationError("take: duration must be positive");

  std::set<int> ids;
  for (const ExoCamera& cam : take.exo_views) {
    if (cam.view_id == kEgoViewId)
      throw ValidationError("take: exo view reuses the ego view id");
    if (cam.view_id < 0)
      throw ValidationError("take: negative view id");
    if (!ids.insert(cam.view_id).second) {
      std::ostringstream msg;
      msg << "take: duplicate exo view id " << cam.view_id;
      throw ValidationError(msg.str());
    }
    if (cam.pose.frame != Frame::CameraFromWorld)
      throw ValidationError("take: exo pose must be CameraFromWorld");
  }
  for (size_t i = 1; i < take.exo_views.size(); ++i) {
    if (take.exo_views[i].view_id < take.exo_views[i - 1].view_id)
      throw ValidationError("take: exo views must be sorted by id");
  }

  int dim = -1;
  std::set<int> stream_ids;
  for (const FeatureStream& s : take.streams) {
    if (!stream_ids.insert(s.view_id).second) {
      std::ostringstream msg;
      msg << "take: duplicate feature stream for view " << s.view_id;
      throw ValidationError(msg.str());
    }
    if (s.view_id != kEgoViewId && ids.count(s.view_id) == 0) {
      std::ostringstream msg;
      msg << "take: feature stream for unknown view " << s.view_id;
      throw ValidationError(msg.str());
    }
    if (dim == -1) dim = s.dim;
    if (s.dim != dim)
      throw ValidationError("take: feature streams disagree on dimension");
    if (s.num_seconds != take.duration_s) {
      std::ostringstream msg;
      msg << "take: stream for view " << s.view_id << " covers "
          << s.num_seconds << " s, take lasts " << take.duration_s << " s";
      throw ValidationError(msg.str());
    }
    if (s.data.size() !=
        static_cast<size_t>(s.num_seconds) * static_cast<size_t>(s.dim))
      throw ValidationError("take: stream data size mismatch");
  }
  if (!take.streams.empty() && stream_ids.count(kEgoViewId) == 0)
    throw ValidationError("take: feature streams are present but the ego "
                          "stream is missing");

  for (int t = 0; t < take.duration_s; ++t) {
    if (!take.ego_track.at(t)) {
      std::ostringstream msg;
      msg << "take: ego track is missing second " << t;
      throw ValidationError(msg.str());
    }
  }

  for (const Keystep& k : take.keysteps.entries) {
    if (!(k.start_s < k.end_s)) {
      std::ostringstream msg;
      msg << "take: keystep '" << k.id << "' has an empty interval";
      throw ValidationError(msg.str());
    }
    if (k.start_s < 0.0 || k.end_s > static_cast<double>(take.duration_s)) {
      std::ostringstream msg;
      msg << "take: keystep '" << k.id << "' lies outside the take";
      throw ValidationError(msg.str());
    }
  }
}

}  // namespace viewdistill
