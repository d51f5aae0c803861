#include "axunet/volume.hpp"

#include <bit>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "payload serialization assumes a little-endian host");

namespace axunet {

const char* region_name(int r) {
  static const char* names[3] = {"ET", "TC", "WT"};
  return names[r];
}

bool valid_label(std::uint8_t v) {
  return v == kLabelBackground || v == kLabelNcr || v == kLabelEd || v == kLabelEt;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void validate_case_id(const std::string& id) {
  if (id.empty()) throw std::invalid_argument("case_id must not be empty");
  for (char c : id)
    if (std::isspace(static_cast<unsigned char>(c)))
      throw std::invalid_argument("case_id must not contain whitespace: '" + id + "'");
}

std::string header_text(const std::string& case_id, const std::array<std::int64_t, 3>& ext,
                        const std::array<double, 3>& spacing, const std::string& payload,
                        const std::string& channels) {
  std::ostringstream os;
  os << "VOL4\n";
  os << "version 1\n";
  os << "case_id " << case_id << "\n";
  os << "extents " << ext[0] << ' ' << ext[1] << ' ' << ext[2] << "\n";
  os << "spacing " << fmt_double(spacing[0]) << ' ' << fmt_double(spacing[1]) << ' '
     << fmt_double(spacing[2]) << "\n";
  if (!channels.empty()) os << "channels " << channels << "\n";
  os << "labels 0 1 2 4\n";
  os << "payload " << payload << "\n";
  os << "dtype f32\n";
  os << "end_header\n";
  return os.str();
}

struct Header {
  std::string case_id;
  std::array<std::int64_t, 3> extents{};
  std::array<double, 3> spacing{};
  std::string payload;
  std::size_t body_offset = 0;
};

Header parse_header(const std::string& buf, const std::string& path) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos)
      throw std::runtime_error("'" + path + "': malformed header (no end_header)");
    std::string line = buf.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != "VOL4")
    throw std::runtime_error("'" + path + "' is not a VOL4 volume (bad magic)");
  Header h;
  bool have_ext = false, have_payload = false;
  for (;;) {
    const std::string line = next_line();
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "version") {
      int v = 0;
      ls >> v;
      if (v != 1) throw std::runtime_error("'" + path + "': unsupported version");
    } else if (key == "case_id") {
      ls >> h.case_id;
    } else if (key == "extents") {
      ls >> h.extents[0] >> h.extents[1] >> h.extents[2];
      if (!ls || h.extents[0] < 1 || h.extents[1] < 1 || h.extents[2] < 1)
        throw std::runtime_error("'" + path + "': invalid extents");
      have_ext = true;
    } else if (key == "spacing") {
      ls >> h.spacing[0] >> h.spacing[1] >> h.spacing[2];
      if (!ls || h.spacing[0] <= 0 || h.spacing[1] <= 0 || h.spacing[2] <= 0)
        throw std::runtime_error("'" + path + "': invalid spacing");
    } else if (key == "payload") {
      ls >> h.payload;
      have_payload = true;
    } else if (key == "channels" || key == "labels" || key == "dtype") {
      // informational
    } else {
      throw std::runtime_error("'" + path + "': unknown header key '" + key + "'");
    }
  }
  if (h.case_id.empty() || !have_ext || !have_payload)
    throw std::runtime_error("'" + path + "': header missing case_id/extents/payload");
  h.body_offset = pos;
  return h;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void append_f32(std::string& out, const double* src, std::int64_t n) {
  const std::size_t at = out.size();
  out.resize(at + static_cast<std::size_t>(n) * 4);
  char* dst = out.data() + at;
  for (std::int64_t i = 0; i < n; ++i) {
    const float f = static_cast<float>(src[i]);
    std::memcpy(dst + i * 4, &f, 4);
  }
}

void read_f32(const std::string& buf, std::size_t& pos, double* dst, std::int64_t n,
              const std::string& path) {
  if (pos + static_cast<std::size_t>(n) * 4 > buf.size())
    throw std::runtime_error("'" + path + "': payload truncated");
  for (std::int64_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, buf.data() + pos + static_cast<std::size_t>(i) * 4, 4);
    dst[i] = static_cast<double>(f);
  }
  pos += static_cast<std::size_t>(n) * 4;
}

std::vector<std::uint8_t> read_labels(const std::string& buf, std::size_t& pos, std::int64_t n,
                                      const std::string& path) {
  if (pos + static_cast<std::size_t>(n) > buf.size())
    throw std::runtime_error("'" + path + "': payload truncated");
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
  std::memcpy(labels.data(), buf.data() + pos, static_cast<std::size_t>(n));
  pos += static_cast<std::size_t>(n);
  for (std::int64_t i = 0; i < n; ++i)
    if (!valid_label(labels[static_cast<std::size_t>(i)]))
      throw std::runtime_error("'" + path + "': label value " +
                               std::to_string(labels[static_cast<std::size_t>(i)]) + " at voxel " +
                               std::to_string(i) + " not in {0, 1, 2, 4}");
  return labels;
}

void check_consumed(const std::string& buf, std::size_t pos, const std::string& path) {
  if (pos != buf.size()) throw std::runtime_error("'" + path + "': trailing bytes after payload");
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

void save_volume(const VolumeCase& c, const std::string& path) {
  validate_case_id(c.case_id);
  const std::int64_t n = c.voxel_count();
  if (c.image.shape() != Shape{kNumChannels, c.extents[0], c.extents[1], c.extents[2]})
    throw std::invalid_argument("volume image shape " + shape_str(c.image.shape()) +
                                " does not match extents");
  if (static_cast<std::int64_t>(c.labels.size()) != n)
    throw std::invalid_argument("label count does not match extents");
  for (auto v : c.labels)
    if (!valid_label(v))
      throw std::invalid_argument("label value " + std::to_string(v) + " not in {0, 1, 2, 4}");
  std::string out = header_text(c.case_id, c.extents, c.spacing, "image+labels",
                                "T1 T1Gd T2 FLAIR");
  append_f32(out, c.image.data(), c.image.size());
  out.append(reinterpret_cast<const char*>(c.labels.data()), c.labels.size());
  atomic_write_file(path, out);
}

VolumeCase load_volume(const std::string& path) {
  const std::string buf = read_file(path);
  const Header h = parse_header(buf, path);
  if (h.payload != "image+labels")
    throw std::runtime_error("'" + path + "': expected image+labels payload, got '" + h.payload +
                             "'");
  VolumeCase c;
  c.case_id = h.case_id;
  c.extents = h.extents;
  c.orig_extents = h.extents;
  c.spacing = h.spacing;
  const std::int64_t n = c.voxel_count();
  c.image = Tensor<double>(Shape{kNumChannels, h.extents[0], h.extents[1], h.extents[2]});
  std::size_t pos = h.body_offset;
  read_f32(buf, pos, c.image.data(), c.image.size(), path);
  c.labels = read_labels(buf, pos, n, path);
  check_consumed(buf, pos, path);
  return c;
}

void save_label_volume(const LabelVolume& v, const std::string& path) {
  validate_case_id(v.case_id);
  const std::int64_t n = v.extents[0] * v.extents[1] * v.extents[2];
  if (static_cast<std::int64_t>(v.labels.size()) != n)
    throw std::invalid_argument("label count does not match extents");
  for (auto lv : v.labels)
    if (!valid_label(lv))
      throw std::invalid_argument("label value " + std::to_string(lv) + " not in {0, 1, 2, 4}");
  std::string out = header_text(v.case_id, v.extents, v.spacing, "labels", "");
  out.append(reinterpret_cast<const char*>(v.labels.data()), v.labels.size());
  atomic_write_file(path, out);
}

LabelVolume load_label_volume(const std::string& path) {
  const std::string buf = read_file(path);
  const Header h = parse_header(buf, path);
  if (h.payload != "labels")
    throw std::runtime_error("'" + path + "': expected labels payload, got '" + h.payload + "'");
  LabelVolume v;
  v.case_id = h.case_id;
  v.extents = h.extents;
  v.spacing = h.spacing;
  std::size_t pos = h.body_offset;
  v.labels = read_labels(buf, pos, v.extents[0] * v.extents[1] * v.extents[2], path);
  check_consumed(buf, pos, path);
  return v;
}

void save_prob_volume(const ProbVolume& v, const std::string& path) {
  validate_case_id(v.case_id);
  if (v.regions.kind != RegionMaps::Kind::probability)
    throw std::invalid_argument("prob volume requires probability region maps");
  const auto ext = v.regions.extents();
  if (v.regions.values.shape() != Shape{kNumRegions, ext[0], ext[1], ext[2]})
    throw std::invalid_argument("region map shape " + shape_str(v.regions.values.shape()) +
                                " is not [3, x, y, z]");
  std::string out = header_text(v.case_id, ext, v.spacing, "probs", "ET TC WT");
  append_f32(out, v.regions.values.data(), v.regions.values.size());
  atomic_write_file(path, out);
}

ProbVolume load_prob_volume(const std::string& path) {
  const std::string buf = read_file(path);
  const Header h = parse_header(buf, path);
  if (h.payload != "probs")
    throw std::runtime_error("'" + path + "': expected probs payload, got '" + h.payload + "'");
  ProbVolume v;
  v.case_id = h.case_id;
  v.spacing = h.spacing;
  v.regions.kind = RegionMaps::Kind::probability;
  v.regions.values =
      Tensor<double>(Shape{kNumRegions, h.extents[0], h.extents[1], h.extents[2]});
  std::size_t pos = h.body_offset;
  read_f32(buf, pos, v.regions.values.data(), v.regions.values.size(), path);
  check_consumed(buf, pos, path);
  return v;
}

std::string peek_case_id(const std::string& path) {
  const std::string buf = read_file(path);
  return parse_header(buf, path).case_id;
}

}  // namespace axunet
