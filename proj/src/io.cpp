#include "viewdistill/io.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "viewdistill/errors.hpp"

namespace viewdistill {

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  size_t start = 0;
  while (start <= text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  // A trailing newline does not create a phantom last line.
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

bool is_space(char c) { return c == ' ' || c == '\t'; }

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

std::vector<std::string_view> split_char(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (true) {
    const size_t end = line.find(sep, start);
    if (end == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, end - start));
    start = end + 1;
  }
  return fields;
}

bool is_comment_or_blank(std::string_view line) {
  for (char c : line) {
    if (is_space(c)) continue;
    return c == '#';
  }
  return true;
}

bool parse_double_token(std::string_view token, double& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_int_token(std::string_view token, int64_t& out) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

[[noreturn]] void fail_line(const char* what, size_t line_no,
                            const std::string& detail) {
  std::ostringstream msg;
  msg << what << ": line " << line_no << ": " << detail;
  throw ParseError(msg.str());
}

[[noreturn]] void fail_line_validation(const char* what, size_t line_no,
                                       const std::string& detail) {
  std::ostringstream msg;
  msg << what << ": line " << line_no << ": " << detail;
  throw ValidationError(msg.str());
}

double parse_double_or_fail(const char* what, size_t line_no,
                            std::string_view token) {
  double v = 0.0;
  if (!parse_double_token(token, v))
    fail_line(what, line_no, "bad number '" + std::string(token) + "'");
  return v;
}

// 12 numbers -> row-major rotation + translation, with the rotation
// checked and repaired. `line_no` only feeds error messages.
Pose parse_pose_tokens(const char* what, size_t line_no,
                       std::span<const std::string_view> tokens) {
  double v[12];
  for (int i = 0; i < 12; ++i)
    v[i] = parse_double_or_fail(what, line_no, tokens[static_cast<size_t>(i)]);
  Eigen::Matrix3d r;
  r << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  Pose pose;
  try {
    pose.rotation = checked_rotation(r);
  } catch (const ValidationError& e) {
    fail_line_validation(what, line_no, e.what());
  }
  pose.translation = Eigen::Vector3d(v[9], v[10], v[11]);
  if (!pose.translation.allFinite())
    fail_line_validation(what, line_no, "non-finite translation");
  pose.frame = Frame::CameraFromWorld;
  return pose;
}

void append_pose_tokens(std::string& out, const Pose& pose) {
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) {
      out += ' ';
      out += format_double(pose.rotation(row, col));
    }
  for (int i = 0; i < 3; ++i) {
    out += ' ';
    out += format_double(pose.translation(i));
  }
}

void write_u16le(std::vector<std::byte>& out, uint16_t v) {
  out.push_back(std::byte(v & 0xff));
  out.push_back(std::byte((v >> 8) & 0xff));
}

void write_u32le(std::vector<std::byte>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(std::byte((v >> (8 * i)) & 0xff));
}

uint16_t read_u16le(std::span<const std::byte> b, size_t at) {
  return static_cast<uint16_t>(std::to_integer<uint16_t>(b[at]) |
                               (std::to_integer<uint16_t>(b[at + 1]) << 8));
}

uint32_t read_u32le(std::span<const std::byte> b, size_t at) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= std::to_integer<uint32_t>(b[at + static_cast<size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::string format_double(double v) {
  if (!std::isfinite(v))
    throw ValidationError("format_double: non-finite value");
  char buf[64];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    double back = 0.0;
    if (parse_double_token(buf, back) && back == v) return buf;
  }
  return buf;  // %.17g always round-trips
}

std::string format_float(float v) {
  return format_double(static_cast<double>(v));
}

std::vector<ExoCamera> parse_calibration(std::string_view text) {
  constexpr const char* kWhat = "calibration";
  std::vector<ExoCamera> cameras;
  std::set<int> seen;
  const auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    if (is_comment_or_blank(lines[i])) continue;
    const auto tokens = split_ws(lines[i]);
    if (tokens.size() != 14)
      fail_line(kWhat, line_no,
                "expected 14 tokens (exo id 9 rotation 3 translation), got " +
                    std::to_string(tokens.size()));
    if (tokens[0] != "exo")
      fail_line(kWhat, line_no,
                "expected leading 'exo', got '" + std::string(tokens[0]) + "'");
    int64_t id = 0;
    if (!parse_int_token(tokens[1], id))
      fail_line(kWhat, line_no, "bad view id '" + std::string(tokens[1]) + "'");
    if (id <= 0 || id > INT32_MAX)
      fail_line_validation(
          kWhat, line_no,
          "exo view id must be a positive 32-bit integer (0 is the ego view)");
    if (!seen.insert(static_cast<int>(id)).second)
      fail_line_validation(kWhat, line_no,
                           "duplicate view id " + std::to_string(id));
    ExoCamera cam;
    cam.view_id = static_cast<int>(id);
    cam.pose = parse_pose_tokens(
        kWhat, line_no, std::span<const std::string_view>(tokens).subspan(2));
    cameras.push_back(std::move(cam));
  }
  return cameras;
}

std::string serialize_calibration(std::span<const ExoCamera> cameras) {
  std::string out;
  for (const ExoCamera& cam : cameras) {
    out += "exo ";
    out += std::to_string(cam.view_id);
    append_pose_tokens(out, cam.pose);
    out += '\n';
  }
  return out;
}

PoseTrack parse_ego_trajectory(std::string_view text) {
  constexpr const char* kWhat = "trajectory";
  PoseTrack track;
  const auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    if (is_comment_or_blank(lines[i])) continue;
    const auto tokens = split_ws(lines[i]);
    if (tokens.size() != 13)
      fail_line(kWhat, line_no,
                "expected 13 tokens (t 9 rotation 3 translation), got " +
                    std::to_string(tokens.size()));
    int64_t t = 0;
    if (!parse_int_token(tokens[0], t))
      fail_line(kWhat, line_no,
                "bad timestamp '" + std::string(tokens[0]) + "'");
    if (!track.timestamps.empty()) {
      if (t == track.timestamps.back())
        fail_line_validation(kWhat, line_no,
                             "duplicate timestamp " + std::to_string(t));
      if (t < track.timestamps.back())
        fail_line_validation(kWhat, line_no,
                             "timestamps must increase, got " +
                                 std::to_string(t) + " after " +
                                 std::to_string(track.timestamps.back()));
    }
    track.timestamps.push_back(t);
    track.poses.push_back(parse_pose_tokens(
        kWhat, line_no, std::span<const std::string_view>(tokens).subspan(1)));
  }
  if (track.timestamps.empty())
    throw ValidationError("trajectory: no pose lines");
  return track;
}

std::string serialize_ego_trajectory(const PoseTrack& track) {
  if (track.timestamps.size() != track.poses.size())
    throw ValidationError("trajectory: timestamp/pose count mismatch");
  std::string out;
  for (size_t i = 0; i < track.timestamps.size(); ++i) {
    out += std::to_string(track.timestamps[i]);
    append_pose_tokens(out, track.poses[i]);
    out += '\n';
  }
  return out;
}

FeatureStream read_feature_stream(std::span<const std::byte> bytes) {
  constexpr size_t kHeader = 18;
  if (bytes.size() < kHeader)
    throw ParseError("feature stream: truncated header (" +
                     std::to_string(bytes.size()) + " bytes)");
  if (std::to_integer<char>(bytes[0]) != 'V' ||
      std::to_integer<char>(bytes[1]) != 'D' ||
      std::to_integer<char>(bytes[2]) != 'F' ||
      std::to_integer<char>(bytes[3]) != 'S')
    throw ParseError("feature stream: bad magic");
  const uint16_t version = read_u16le(bytes, 4);
  if (version != 1)
    throw ParseError("feature stream: unsupported version " +
                     std::to_string(version));
  const uint32_t view_id = read_u32le(bytes, 6);
  const uint32_t rows = read_u32le(bytes, 10);
  const uint32_t dim = read_u32le(bytes, 14);
  if (view_id > INT32_MAX)
    throw ValidationError("feature stream: view id out of range");
  if (rows == 0 || dim == 0)
    throw ValidationError("feature stream: T and D must be positive");
  const uint64_t expected =
      static_cast<uint64_t>(rows) * static_cast<uint64_t>(dim) * 4ull;
  const uint64_t actual = bytes.size() - kHeader;
  if (actual != expected)
    throw ParseError("feature stream: payload is " + std::to_string(actual) +
                     " bytes, header promises " + std::to_string(expected));

  FeatureStream stream;
  stream.view_id = static_cast<int>(view_id);
  stream.num_seconds = static_cast<int>(rows);
  stream.dim = static_cast<int>(dim);
  stream.data.resize(static_cast<size_t>(rows) * dim);
  for (size_t i = 0; i < stream.data.size(); ++i) {
    const uint32_t word = read_u32le(bytes, kHeader + i * 4);
    stream.data[i] = std::bit_cast<float>(word);
  }
  for (int t = 0; t < stream.num_seconds; ++t) {
    bool all_zero = true;
    for (float x : stream.row(t)) {
      if (!std::isfinite(x))
        throw ValidationError("feature stream: non-finite value in row " +
                              std::to_string(t));
      if (x != 0.0f) all_zero = false;
    }
    if (all_zero)
      throw ValidationError("feature stream: zero-norm row " +
                            std::to_string(t) +
                            " (cosine similarity needs a direction)");
  }
  return stream;
}

std::vector<std::byte> write_feature_stream(const FeatureStream& stream) {
  if (stream.num_seconds <= 0 || stream.dim <= 0)
    throw ValidationError("feature stream: T and D must be positive");
  if (stream.view_id < 0)
    throw ValidationError("feature stream: negative view id");
  if (stream.data.size() != static_cast<size_t>(stream.num_seconds) *
                                static_cast<size_t>(stream.dim))
    throw ValidationError("feature stream: data size mismatch");
  for (float x : stream.data)
    if (!std::isfinite(x))
      throw ValidationError("feature stream: non-finite value");

  std::vector<std::byte> out;
  out.reserve(18 + stream.data.size() * 4);
  out.push_back(std::byte('V'));
  out.push_back(std::byte('D'));
  out.push_back(std::byte('F'));
  out.push_back(std::byte('S'));
  write_u16le(out, 1);
  write_u32le(out, static_cast<uint32_t>(stream.view_id));
  write_u32le(out, static_cast<uint32_t>(stream.num_seconds));
  write_u32le(out, static_cast<uint32_t>(stream.dim));
  for (float x : stream.data) write_u32le(out, std::bit_cast<uint32_t>(x));
  return out;
}

KeystepSet parse_keystep_annotations(std::string_view text,
                                     const EmbeddingFileLoader& loader) {
  constexpr const char* kWhat = "keysteps";
  KeystepSet set;
  std::set<std::string> seen;
  const auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    if (is_comment_or_blank(lines[i])) continue;
    const auto fields = split_char(lines[i], '\t');
    if (fields.size() != 4)
      fail_line(kWhat, line_no,
                "expected 4 tab-separated fields, got " +
                    std::to_string(fields.size()));
    Keystep entry;
    entry.id = std::string(fields[0]);
    if (entry.id.empty()) fail_line(kWhat, line_no, "empty keystep id");
    if (!seen.insert(entry.id).second)
      fail_line_validation(kWhat, line_no,
                           "duplicate keystep id '" + entry.id + "'");
    entry.start_s = parse_double_or_fail(kWhat, line_no, fields[1]);
    entry.end_s = parse_double_or_fail(kWhat, line_no, fields[2]);
    if (!std::isfinite(entry.start_s) || !std::isfinite(entry.end_s))
      fail_line_validation(kWhat, line_no, "non-finite interval");
    if (!(entry.start_s < entry.end_s))
      fail_line_validation(kWhat, line_no,
                           "keystep interval must satisfy start < end");

    const std::string_view ref = fields[3];
    if (ref != "-") {
      const size_t colon = ref.rfind(':');
      if (colon == std::string_view::npos || colon == 0 ||
          colon + 1 == ref.size())
        fail_line(kWhat, line_no,
                  "embedding ref must be '<file>:<row>' or '-', got '" +
                      std::string(ref) + "'");
      const std::string name(ref.substr(0, colon));
      int64_t row = -1;
      if (!parse_int_token(ref.substr(colon + 1), row) || row < 0)
        fail_line(kWhat, line_no,
                  "bad embedding row in '" + std::string(ref) + "'");
      if (!loader)
        fail_line(kWhat, line_no,
                  "embedding ref present but no embedding loader given");
      const FeatureStream& emb = loader(name);
      if (row >= emb.num_seconds)
        fail_line(kWhat, line_no,
                  "embedding row " + std::to_string(row) + " out of range (" +
                      name + " has " + std::to_string(emb.num_seconds) +
                      " rows)");
      const auto r = emb.row(static_cast<int>(row));
      entry.embedding.assign(r.begin(), r.end());
    }
    set.entries.push_back(std::move(entry));
  }
  return set;
}

std::string serialize_keystep_annotations(
    const KeystepSet& set, std::string_view embedding_file_name) {
  std::string out;
  for (size_t i = 0; i < set.entries.size(); ++i) {
    const Keystep& k = set.entries[i];
    if (k.id.find('\t') != std::string::npos ||
        k.id.find('\n') != std::string::npos)
      throw ValidationError("keysteps: id contains a tab or newline");
    out += k.id;
    out += '\t';
    out += format_double(k.start_s);
    out += '\t';
    out += format_double(k.end_s);
    out += '\t';
    if (k.embedding.empty()) {
      out += '-';
    } else {
      out += std::string(embedding_file_name) + ":" + std::to_string(i);
    }
    out += '\n';
  }
  return out;
}

RankingTimeline parse_ranking_cache(std::string_view text) {
  constexpr const char* kWhat = "ranking cache";
  RankingTimeline timeline;
  std::vector<int> reference_ids;
  const auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    if (is_comment_or_blank(lines[i])) continue;
    const auto tokens = split_ws(lines[i]);
    if (tokens.size() < 2)
      fail_line(kWhat, line_no, "expected '<t> <view_id ...>'");
    int64_t t = 0;
    if (!parse_int_token(tokens[0], t))
      fail_line(kWhat, line_no,
                "bad timestamp '" + std::string(tokens[0]) + "'");
    const auto expected_t = static_cast<int64_t>(timeline.per_second.size());
    if (t != expected_t)
      fail_line_validation(kWhat, line_no,
                           "timestamps must be contiguous from 0; expected " +
                               std::to_string(expected_t) + ", got " +
                               std::to_string(t));
    ViewRanking ranking;
    ranking.timestamp = t;
    std::set<int> seen;
    for (size_t j = 1; j < tokens.size(); ++j) {
      int64_t id = 0;
      if (!parse_int_token(tokens[j], id))
        fail_line(kWhat, line_no,
                  "bad view id '" + std::string(tokens[j]) + "'");
      if (id < 0 || id > INT32_MAX)
        fail_line_validation(kWhat, line_no, "view id out of range");
      if (!seen.insert(static_cast<int>(id)).second)
        fail_line_validation(kWhat, line_no,
                             "duplicate view id " + std::to_string(id));
      ranking.order.push_back(static_cast<int>(id));
    }
    if (ranking.order.front() != kEgoViewId)
      fail_line_validation(kWhat, line_no,
                           "first view on each line must be the ego view (0)");
    std::vector<int> sorted_ids(ranking.order);
    std::sort(sorted_ids.begin(), sorted_ids.end());
    if (reference_ids.empty())
      reference_ids = sorted_ids;
    else if (sorted_ids != reference_ids)
      fail_line_validation(kWhat, line_no,
                           "view id set differs from previous lines");
    timeline.per_second.push_back(std::move(ranking));
  }
  if (timeline.per_second.empty())
    throw ValidationError("ranking cache: no ranking lines");
  return timeline;
}

std::string serialize_ranking_cache(const RankingTimeline& timeline) {
  std::string out;
  for (const ViewRanking& r : timeline.per_second) {
    out += std::to_string(r.timestamp);
    for (int id : r.order) {
      out += ' ';
      out += std::to_string(id);
    }
    out += '\n';
  }
  return out;
}

std::string serialize_visibility_csv(std::span<const VisibilityRecord> rows) {
  std::string out = "t,view_id,visible_fraction\n";
  for (const VisibilityRecord& r : rows) {
    out += std::to_string(r.t);
    out += ',';
    out += std::to_string(r.view_id);
    out += ',';
    out += format_double(r.visible_fraction);
    out += '\n';
  }
  return out;
}

std::vector<VisibilityRecord> parse_visibility_csv(std::string_view text) {
  constexpr const char* kWhat = "visibility csv";
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "t,view_id,visible_fraction")
    throw ParseError(
        "visibility csv: missing header 't,view_id,visible_fraction'");
  std::vector<VisibilityRecord> rows;
  for (size_t i = 1; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    if (lines[i].empty()) continue;
    const auto fields = split_char(lines[i], ',');
    if (fields.size() != 3)
      fail_line(kWhat, line_no, "expected 3 comma-separated fields");
    VisibilityRecord rec;
    int64_t t = 0, id = 0;
    if (!parse_int_token(fields[0], t))
      fail_line(kWhat, line_no, "bad timestamp");
    if (!parse_int_token(fields[1], id) || id < 0 || id > INT32_MAX)
      fail_line(kWhat, line_no, "bad view id");
    rec.t = t;
    rec.view_id = static_cast<int>(id);
    rec.visible_fraction = parse_double_or_fail(kWhat, line_no, fields[2]);
    if (!std::isfinite(rec.visible_fraction) || rec.visible_fraction < 0.0 ||
        rec.visible_fraction > 1.0)
      fail_line_validation(kWhat, line_no,
                           "visible_fraction must be in [0, 1]");
    rows.push_back(rec);
  }
  return rows;
}

std::vector<ScoredSpan> parse_predictions(std::string_view text) {
  constexpr const char* kWhat = "predictions";
  std::vector<ScoredSpan> spans;
  const auto lines = split_lines(text);
  for (size_t i = 0; i < lines.size(); ++i) {
    const size_t line_no = i + 1;
    if (is_comment_or_blank(lines[i])) continue;
    const auto fields = split_char(lines[i], '\t');
    if (fields.size() != 5)
      fail_line(kWhat, line_no,
                "expected 5 tab-separated fields "
                "(id start end embedding_ref confidence), got " +
                    std::to_string(fields.size()));
    ScoredSpan span;
    span.keystep_id = std::string(fields[0]);
    if (span.keystep_id.empty()) fail_line(kWhat, line_no, "empty keystep id");
    span.start_s = parse_double_or_fail(kWhat, line_no, fields[1]);
    span.end_s = parse_double_or_fail(kWhat, line_no, fields[2]);
    if (!std::isfinite(span.start_s) || !std::isfinite(span.end_s))
      fail_line_validation(kWhat, line_no, "non-finite span");
    if (span.start_s > span.end_s)
      fail_line_validation(kWhat, line_no, "span start exceeds end");
    span.confidence = parse_double_or_fail(kWhat, line_no, fields[4]);
    if (!std::isfinite(span.confidence))
      fail_line_validation(kWhat, line_no, "non-finite confidence");
    spans.push_back(std::move(span));
  }
  return spans;
}

std::string serialize_predictions(std::span<const ScoredSpan> spans) {
  std::string out;
  for (const ScoredSpan& s : spans) {
    if (s.keystep_id.find('\t') != std::string::npos ||
        s.keystep_id.find('\n') != std::string::npos)
      throw ValidationError("predictions: id contains a tab or newline");
    out += s.keystep_id;
    out += '\t';
    out += format_double(s.start_s);
    out += '\t';
    out += format_double(s.end_s);
    out += "\t-\t";
    out += format_double(s.confidence);
    out += '\n';
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw ParseError("error reading file: " + path.string());
  return std::move(buf).str();
}

std::vector<std::byte> read_binary_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<std::byte> bytes(text.size());
  std::memcpy(bytes.data(), text.data(), text.size());
  return bytes;
}

namespace {

void write_atomic_impl(const std::filesystem::path& path, const void* data,
                       size_t size) {
  static std::atomic<uint64_t> counter{0};
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" +
         std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot create file: " + tmp.string());
    out.write(static_cast<const char*>(data),
              static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw ParseError("error writing file: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ec2;
    std::filesystem::remove(tmp, ec2);
    throw ParseError("cannot rename temp file onto " + path.string() + ": " +
                     ec.message());
  }
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents) {
  write_atomic_impl(path, contents.data(), contents.size());
}

void write_file_atomic(const std::filesystem::path& path,
                       std::span<const std::byte> contents) {
  write_atomic_impl(path, contents.data(), contents.size());
}

}  // namespace viewdistill
