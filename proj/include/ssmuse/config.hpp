#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssmuse/energy.hpp"
#include "ssmuse/network.hpp"
#include "ssmuse/seqsim.hpp"
#include "ssmuse/solver.hpp"

namespace ssmuse {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Parsed `[section]` / `key = value` text. Keys may repeat; order is kept.
struct IniFile {
  struct Entry {
    std::string section, key, value;
    std::size_t line = 0;
  };
  std::vector<Entry> entries;

  static IniFile parse(const std::string& text);
  static IniFile load(const std::filesystem::path& path);
};

/// Ellipsoid in FOV-normalised coordinates (the volume spans [-1/2, 1/2)).
struct Tissue {
  double t1 = 1.0;
  double pd = 1.0;
  std::array<double, 3> center{0.0, 0.0, 0.0};
  std::array<double, 3> radii{0.3, 0.3, 0.3};
};

enum class Method { ssmuse, quadratic, wavelet };
Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct ExperimentConfig {
  // [phantom]
  Dims3 dims{32, 32, 32};
  std::vector<Tissue> tissues = default_tissues();
  // [sequence]
  std::size_t echoes = 96;
  double inversion_efficiency = 1.0;
  std::size_t dictionary_size = 100;
  double t1_min = 0.1, t1_max = 5.0;
  std::size_t rank = 4;
  // [acquisition]
  std::size_t spokes_per_frame = 2;
  std::size_t accelerated_spokes = 1;
  std::size_t readout = 32;
  std::size_t coils = 4;
  double noise_sigma = 0.01;
  // [recon]
  Method method = Method::ssmuse;
  Method reference_method = Method::quadratic;
  ReconConfig recon;
  double quadratic_mu = 1e-3;
  double wavelet_gamma = 2e-4;
  std::size_t wavelet_iters = 30;
  // [train]
  TrainConfig train = desk_training();
  std::size_t train_phantoms = 1;
  double snr_floor = 0.05;
  NetworkArch arch = NetworkArch::desk_default();
  std::string model_path;  // empty: train a model inside `run`
  // [eval]
  std::vector<std::size_t> contrast_frames{8, 40, 80};
  bool record_wall_time = false;
  // [seeds]
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> trajectory_seed, noise_seed, init_seed, train_seed, train_phantom_seed;
  // [output]
  std::filesystem::path output_dir = "out";

  static std::vector<Tissue> default_tissues();
  /// 10 epochs at learning rate 1e-3, otherwise the TrainConfig defaults.
  static TrainConfig desk_training();

  std::uint64_t trajectory_seed_value() const { return trajectory_seed.value_or(seed); }
  std::uint64_t noise_seed_value() const { return noise_seed.value_or(seed + 1000003); }
  std::uint64_t init_seed_value() const { return init_seed.value_or(seed + 2000003); }
  std::uint64_t train_seed_value() const { return train_seed.value_or(seed + 3000017); }
  std::uint64_t train_phantom_seed_value() const { return train_phantom_seed.value_or(seed + 4000037); }

  SequenceParams sequence() const;

  /// Throws ConfigError describing the first inconsistency.
  void validate() const;

  static ExperimentConfig from_ini(const IniFile& ini);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Complete config text that parses back to this config.
  std::string to_ini() const;
};

}  // namespace ssmuse
