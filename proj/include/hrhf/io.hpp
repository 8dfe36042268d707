#pragma once

#include <cstdint>
#include <string>

#include "hrhf/dataset.hpp"
#include "hrhf/labelmap.hpp"
#include "hrhf/segnet.hpp"
#include "hrhf/tensor.hpp"

namespace hrhf {

class VersionError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public Error {
 public:
  using Error::Error;
};

namespace io {

// write-temp-then-rename; creates parent directories
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void make_dirs(const std::string& path);

std::string fnv1a_hex(const std::string& bytes);

// binary P6, maxval 255, bytes rounded half-up from [0,1]
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// binary P5, label indices as bytes (ignore mask not represented)
void write_pgm(const std::string& path, const LabelMap& labels);
LabelMap read_pgm(const std::string& path);

std::string ppm_bytes(const Tensor& image);
std::string pgm_bytes(const LabelMap& labels);

struct Checkpoint {
  ModelState model;
  StepSpec steps;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// "HRHF1" magic, little-endian u64 header length, JSON header, then the
// named parameter arrays (including batch-norm running stats) as raw
// little-endian f64. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const ModelState& model,
                     const StepSpec& steps, std::uint64_t seed,
                     const std::string& config_hash);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace io
}  // namespace hrhf
