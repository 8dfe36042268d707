#include "hrhf/io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace hrhf::io {

namespace fs = std::filesystem;
using nlohmann::json;

void make_dirs(const std::string& path) {
  if (!path.empty()) fs::create_directories(path);
}

bool file_exists(const std::string& path) { return fs::exists(path); }

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("short write to " + tmp.string());
  }
  fs::rename(tmp, p);
}

std::string read_file(const std::string& path) {
  if (!fs::exists(path)) throw MissingFileError("no such file: " + path);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::string out((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  return out;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string ppm_bytes(const Tensor& image) {
  if (image.rank() != 3 || image.shape[2] != 3)
    throw Error("write_ppm: image must be [H,W,3]");
  const auto H = image.shape[0];
  const auto W = image.shape[1];
  std::string out =
      "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(H * W * 3));
  for (std::int64_t i = 0; i < H * W * 3; ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    const int b = static_cast<int>(std::floor(v * 255.0 + 0.5));
    out.push_back(static_cast<char>(std::clamp(b, 0, 255)));
  }
  return out;
}

void write_ppm(const std::string& path, const Tensor& image) {
  write_file_atomic(path, ppm_bytes(image));
}

namespace {

// parses "P6\nW H\nMAX\n" style headers with arbitrary whitespace
struct PnmHeader {
  std::int64_t width = 0, height = 0, maxval = 0;
  size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const char* magic,
                           const std::string& path) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1])
    throw Error(path + ": not a " + std::string(magic) + " file");
  size_t pos = 2;
  std::int64_t fields[3];
  for (int f = 0; f < 3; ++f) {
    while (pos < bytes.size() &&
           (std::isspace(static_cast<unsigned char>(bytes[pos])) ||
            bytes[pos] == '#')) {
      if (bytes[pos] == '#')
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      else
        ++pos;
    }
    std::int64_t v = 0;
    bool any = false;
    while (pos < bytes.size() &&
           std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      any = true;
    }
    if (!any) throw Error(path + ": malformed header");
    fields[f] = v;
  }
  if (pos >= bytes.size() ||
      !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw Error(path + ": malformed header");
  ++pos;
  return {fields[0], fields[1], fields[2], pos};
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  const std::string bytes = read_file(path);
  const PnmHeader h = parse_pnm_header(bytes, "P6", path);
  if (h.maxval != 255) throw Error(path + ": expected maxval 255");
  const size_t need = static_cast<size_t>(h.width * h.height * 3);
  if (bytes.size() - h.data_offset < need)
    throw Error(path + ": truncated pixel data");
  Tensor t = Tensor::zeros({h.height, h.width, 3});
  for (size_t i = 0; i < need; ++i)
    t[static_cast<std::int64_t>(i)] =
        static_cast<unsigned char>(bytes[h.data_offset + i]) / 255.0;
  return t;
}

std::string pgm_bytes(const LabelMap& labels) {
  std::string out = "P5\n" + std::to_string(labels.width) + " " +
                    std::to_string(labels.height) + "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(labels.pixels()));
  for (int v : labels.idx) {
    if (v < 0 || v > 255)
      throw Error("write_pgm: label " + std::to_string(v) +
                  " does not fit a byte");
    out.push_back(static_cast<char>(v));
  }
  return out;
}

void write_pgm(const std::string& path, const LabelMap& labels) {
  write_file_atomic(path, pgm_bytes(labels));
}

LabelMap read_pgm(const std::string& path) {
  const std::string bytes = read_file(path);
  const PnmHeader h = parse_pnm_header(bytes, "P5", path);
  if (h.maxval != 255) throw Error(path + ": expected maxval 255");
  const size_t need = static_cast<size_t>(h.width * h.height);
  if (bytes.size() - h.data_offset < need)
    throw Error(path + ": truncated pixel data");
  LabelMap lm = LabelMap::filled(h.height, h.width, 0);
  for (size_t i = 0; i < need; ++i)
    lm.idx[i] = static_cast<unsigned char>(bytes[h.data_offset + i]);
  return lm;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'H', 'R', 'H', 'F', '1'};
constexpr int kVersion = 1;

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t parse_u64(const std::string& bytes, size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(
             static_cast<unsigned char>(bytes[at + static_cast<size_t>(i)]))
         << (8 * i);
  return v;
}

void append_f64le(std::string& out, const std::vector<double>& v) {
  static_assert(sizeof(double) == 8);
  const size_t at = out.size();
  out.resize(at + v.size() * 8);
  std::memcpy(out.data() + at, v.data(), v.size() * 8);
}

struct NamedArray {
  std::string name;
  Tensor* t;
};

std::vector<NamedArray> checkpoint_arrays(ModelState& m) {
  std::vector<NamedArray> arrays;
  for (size_t i = 0; i < m.blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    ConvBlock& b = m.blocks[i];
    arrays.push_back({p + "w", &b.w});
    arrays.push_back({p + "b", &b.b});
    arrays.push_back({p + "gamma", &b.gamma});
    arrays.push_back({p + "beta", &b.beta});
    arrays.push_back({p + "run_mean", &b.run_mean});
    arrays.push_back({p + "run_var", &b.run_var});
  }
  arrays.push_back({"head.w", &m.head_w});
  arrays.push_back({"head.b", &m.head_b});
  return arrays;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& model,
                     const StepSpec& steps, std::uint64_t seed,
                     const std::string& config_hash) {
  json header;
  header["version"] = kVersion;
  header["arch"] = {{"blocks", model.arch.blocks},
                    {"channels", model.arch.channels},
                    {"kernel", model.arch.kernel},
                    {"bn_eps", model.arch.bn_eps},
                    {"bn_momentum", model.arch.bn_momentum},
                    {"head_init_sigma", model.arch.head_init_sigma}};
  header["class_count"] = model.class_count;
  header["step_index"] = model.step_index;
  header["universe"] = steps.step_classes;
  header["split_mode"] =
      steps.mode == SplitMode::Disjoint ? "disjoint" : "overlapped";
  header["seed"] = seed;
  header["config_hash"] = config_hash;

  ModelState& mref = const_cast<ModelState&>(model);  // read-only use
  const auto arrays = checkpoint_arrays(mref);
  json jarr = json::array();
  std::int64_t offset = 0;
  for (const auto& a : arrays) {
    jarr.push_back(
        {{"name", a.name}, {"shape", a.t->shape}, {"offset", offset}});
    offset += a.t->numel();
  }
  header["arrays"] = jarr;
  header["encoding"] = "f64le";

  std::string out(kMagic, sizeof kMagic);
  const std::string hs = header.dump();
  append_u64(out, hs.size());
  out += hs;
  for (const auto& a : arrays) append_f64le(out, a.t->data);
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < sizeof(kMagic) + 8 ||
      std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw VersionError(path + ": not an HRHF1 checkpoint");
  const std::uint64_t hlen = parse_u64(bytes, sizeof kMagic);
  const size_t hstart = sizeof(kMagic) + 8;
  if (bytes.size() < hstart + hlen)
    throw Error(path + ": truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(hstart, hlen));
  } catch (const json::exception& e) {
    throw Error(path + ": bad checkpoint header: " + e.what());
  }
  if (header.at("version").get<int>() != kVersion)
    throw VersionError(path + ": checkpoint version " +
                       header.at("version").dump() + ", expected " +
                       std::to_string(kVersion));

  Checkpoint ck;
  const auto& ja = header.at("arch");
  ck.model.arch.blocks = ja.at("blocks").get<int>();
  ck.model.arch.channels = ja.at("channels").get<int>();
  ck.model.arch.kernel = ja.at("kernel").get<int>();
  ck.model.arch.bn_eps = ja.at("bn_eps").get<double>();
  ck.model.arch.bn_momentum = ja.at("bn_momentum").get<double>();
  ck.model.arch.head_init_sigma = ja.at("head_init_sigma").get<double>();
  ck.model.class_count = header.at("class_count").get<int>();
  ck.model.step_index = header.at("step_index").get<int>();
  ck.steps.step_classes =
      header.at("universe").get<std::vector<std::vector<int>>>();
  ck.steps.mode = header.at("split_mode").get<std::string>() == "disjoint"
                      ? SplitMode::Disjoint
                      : SplitMode::Overlapped;
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.config_hash = header.at("config_hash").get<std::string>();

  const size_t payload = hstart + hlen;
  ck.model.blocks.resize(static_cast<size_t>(ck.model.arch.blocks));
  auto arrays = checkpoint_arrays(ck.model);
  const auto& jarr = header.at("arrays");
  if (jarr.size() != arrays.size())
    throw Error(path + ": array count mismatch");
  for (size_t i = 0; i < arrays.size(); ++i) {
    const auto& e = jarr[i];
    if (e.at("name").get<std::string>() != arrays[i].name)
      throw Error(path + ": unexpected array order, found " +
                  e.at("name").get<std::string>() + " wanted " +
                  arrays[i].name);
    const Shape shape = e.at("shape").get<Shape>();
    const std::int64_t offset = e.at("offset").get<std::int64_t>();
    const std::int64_t n = shape_numel(shape);
    const size_t at = payload + static_cast<size_t>(offset) * 8;
    if (bytes.size() < at + static_cast<size_t>(n) * 8)
      throw Error(path + ": truncated payload at " + arrays[i].name);
    Tensor t = Tensor::zeros(shape);
    std::memcpy(t.data.data(), bytes.data() + at,
                static_cast<size_t>(n) * 8);
    *arrays[i].t = std::move(t);
  }
  return ck;
}

}  // namespace hrhf::io
