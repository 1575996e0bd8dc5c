#include "attflow/dataset_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "attflow/errors.hpp"

namespace attflow::io {

namespace {

constexpr const char* kSplitNames[3] = {"train", "val", "test"};
constexpr char kTargetsMagic[8] = {'A', 'T', 'F', 'L', 'T', 'G', 'T', 'S'};

std::string frame_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ifstream open_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

BoundingBox read_box(std::istringstream& ls, const fs::path& path, std::size_t line) {
  BoundingBox b;
  if (!(ls >> b.x >> b.y >> b.w >> b.h) || b.w < 1 || b.h < 1) {
    throw FormatError("annotation " + path.string() + ": bad box on line " + std::to_string(line), 0);
  }
  return b;
}

}  // namespace

void write_annotation(const fs::path& path, const scene::Scene& s) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "attflow-annotation " << kAnnotationVersion << '\n';
  os << "seed " << s.seed << '\n';
  os << "size " << s.image.width << ' ' << s.image.height << '\n';
  for (std::size_t f = 0; f < s.face_boxes.size(); ++f) {
    const auto& b = s.face_boxes[f];
    os << "face " << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << ' '
       << exact(s.gaze_directions[f].x) << ' ' << exact(s.gaze_directions[f].y) << '\n';
  }
  if (s.coatt_box) {
    const auto& b = *s.coatt_box;
    os << "coatt " << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << '\n';
  }
  for (const auto& b : s.distractor_boxes) {
    os << "distractor " << b.x << ' ' << b.y << ' ' << b.w << ' ' << b.h << '\n';
  }
  os << "joint " << int(s.has_joint_attention) << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

scene::Scene read_scene(const fs::path& image_path, const fs::path& annotation_path) {
  auto is = open_text(annotation_path);
  scene::Scene s;
  std::string line;
  std::size_t lineno = 0;
  bool have_size = false, have_joint = false;
  std::size_t width = 0, height = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (lineno == 1) {
      int version = 0;
      if (key != "attflow-annotation" || !(ls >> version)) {
        throw FormatError("annotation " + annotation_path.string() + ": missing header", 0);
      }
      if (version != kAnnotationVersion) {
        throw VersionError("annotation " + annotation_path.string() + ": version " +
                           std::to_string(version) + " is not supported");
      }
      continue;
    }
    if (key == "seed") {
      if (!(ls >> s.seed)) throw FormatError("annotation: bad seed line", 0);
    } else if (key == "size") {
      if (!(ls >> width >> height)) throw FormatError("annotation: bad size line", 0);
      have_size = true;
    } else if (key == "face") {
      s.face_boxes.push_back(read_box(ls, annotation_path, lineno));
      Point g;
      if (!(ls >> g.x >> g.y)) throw FormatError("annotation: bad gaze on line " + std::to_string(lineno), 0);
      s.gaze_directions.push_back(g);
    } else if (key == "coatt") {
      s.coatt_box = read_box(ls, annotation_path, lineno);
    } else if (key == "distractor") {
      s.distractor_boxes.push_back(read_box(ls, annotation_path, lineno));
    } else if (key == "joint") {
      int j = 0;
      if (!(ls >> j)) throw FormatError("annotation: bad joint line", 0);
      s.has_joint_attention = j != 0;
      have_joint = true;
    } else {
      throw FormatError("annotation " + annotation_path.string() + ": unknown record '" + key +
                            "' on line " + std::to_string(lineno),
                        0);
    }
  }
  if (lineno == 0) throw FormatError("annotation " + annotation_path.string() + ": empty file", 0);
  if (!have_size || !have_joint || s.has_joint_attention != s.coatt_box.has_value()) {
    throw FormatError("annotation " + annotation_path.string() + ": incomplete or inconsistent", 0);
  }
  s.image = read_pnm(image_path);
  if (s.image.channels != 3 || s.image.width != width || s.image.height != height) {
    throw FormatError("image " + image_path.string() + " does not match its annotation", 0);
  }
  return s;
}

void write_dataset(const fs::path& dir, const scene::Dataset& ds) {
  fs::create_directories(dir);
  const std::vector<scene::Scene>* splits[3] = {&ds.train, &ds.val, &ds.test};
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
  manifest << "attflow-dataset " << kDatasetVersion << '\n';
  for (std::size_t k = 0; k < 3; ++k) {
    const fs::path sub = dir / kSplitNames[k];
    fs::create_directories(sub);
    const auto& scenes = *splits[k];
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      write_ppm(sub / (frame_name(i) + ".ppm"), scenes[i].image);
      write_annotation(sub / (frame_name(i) + ".txt"), scenes[i]);
    }
    manifest << "split " << kSplitNames[k] << ' ' << scenes.size() << '\n';
  }
  if (!manifest) throw IoError("failed writing manifest");
}

scene::Dataset read_dataset(const fs::path& dir) {
  auto is = open_text(dir / "manifest.txt");
  std::string word;
  int version = 0;
  if (!(is >> word >> version) || word != "attflow-dataset") {
    throw FormatError("manifest " + (dir / "manifest.txt").string() + ": missing header", 0);
  }
  if (version != kDatasetVersion) {
    throw VersionError("dataset version " + std::to_string(version) + " is not supported");
  }
  scene::Dataset ds;
  std::vector<scene::Scene>* splits[3] = {&ds.train, &ds.val, &ds.test};
  bool seen[3] = {false, false, false};
  std::string name;
  std::size_t count = 0;
  while (is >> word >> name >> count) {
    if (word != "split") throw FormatError("manifest: unexpected record '" + word + "'", 0);
    std::size_t k = 0;
    while (k < 3 && name != kSplitNames[k]) ++k;
    if (k == 3) throw FormatError("manifest: unknown split '" + name + "'", 0);
    seen[k] = true;
    auto& out = *splits[k];
    out.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const fs::path base = dir / name / frame_name(i);
      out[i] = read_scene(base.string() + ".ppm", base.string() + ".txt");
    }
  }
  if (!is.eof()) throw FormatError("manifest: malformed split line", 0);
  if (!(seen[0] && seen[1] && seen[2])) throw FormatError("manifest: missing split", 0);
  return ds;
}

void write_targets(const fs::path& path, const std::vector<Image>& targets) {
  std::vector<std::uint8_t> out(kTargetsMagic, kTargetsMagic + 8);
  auto put = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
  };
  const Image ref = targets.empty() ? Image() : targets[0];
  put(kTargetsVersion, 4);
  put(targets.size(), 4);
  put(ref.channels, 4);
  put(ref.height, 4);
  put(ref.width, 4);
  for (const auto& t : targets) {
    if (t.channels != ref.channels || t.height != ref.height || t.width != ref.width) {
      throw ParameterError("write_targets: all targets must share dimensions");
    }
    for (double v : t.pixels) put(std::bit_cast<std::uint64_t>(v), 8);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

std::vector<Image> read_targets(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto get = [&](int n) {
    if (b.size() - pos < std::size_t(n)) throw FormatError("targets: truncated file", pos);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(b[pos + i]) << (8 * i);
    pos += n;
    return v;
  };
  if (b.size() < 8 || std::memcmp(b.data(), kTargetsMagic, 8) != 0) {
    throw FormatError("targets: bad magic in " + path.string(), 0);
  }
  pos = 8;
  const auto version = get(4);
  if (version != kTargetsVersion) {
    throw VersionError("targets version " + std::to_string(version) + " is not supported");
  }
  const std::size_t count = get(4), c = get(4), h = get(4), w = get(4);
  if ((b.size() - pos) / 8 / std::max<std::size_t>(1, c * h * w) < count) {
    throw FormatError("targets: truncated data", b.size());
  }
  std::vector<Image> out(count, Image(c, h, w));
  for (auto& img : out)
    for (auto& v : img.pixels) v = std::bit_cast<double>(get(8));
  if (pos != b.size()) throw FormatError("targets: trailing bytes", pos);
  return out;
}

}  // namespace attflow::io
