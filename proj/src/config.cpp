#include "ssmuse/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace ssmuse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == ',') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

[[noreturn]] void bad(const IniFile::Entry& e, const std::string& why) {
  throw ConfigError("config line " + std::to_string(e.line) + ": [" + e.section + "] " + e.key + ": " + why);
}

double parse_real(const IniFile::Entry& e, const std::string& s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) bad(e, "expected a number, got '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const IniFile::Entry& e, const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) bad(e, "expected a non-negative integer, got '" + s + "'");
  return v;
}

bool parse_bool(const IniFile::Entry& e, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  bad(e, "expected true or false, got '" + s + "'");
}

std::vector<double> parse_reals(const IniFile::Entry& e) {
  std::vector<double> out;
  for (const auto& w : split_words(e.value)) out.push_back(parse_real(e, w));
  return out;
}

std::vector<std::size_t> parse_uints(const IniFile::Entry& e) {
  std::vector<std::size_t> out;
  for (const auto& w : split_words(e.value)) out.push_back(static_cast<std::size_t>(parse_uint(e, w)));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

IniFile IniFile::parse(const std::string& text) {
  IniFile ini;
  std::istringstream is(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = raw;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    if (section.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": key outside a section");
    Entry e{section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (e.key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    ini.entries.push_back(std::move(e));
  }
  return ini;
}

IniFile IniFile::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

Method method_from_string(const std::string& s) {
  if (s == "ssmuse") return Method::ssmuse;
  if (s == "quadratic") return Method::quadratic;
  if (s == "wavelet") return Method::wavelet;
  throw ConfigError("unknown method '" + s + "' (expected ssmuse, quadratic or wavelet)");
}

std::string to_string(Method m) {
  switch (m) {
    case Method::ssmuse: return "ssmuse";
    case Method::quadratic: return "quadratic";
    case Method::wavelet: return "wavelet";
  }
  return "?";
}

TrainConfig ExperimentConfig::desk_training() {
  TrainConfig t;
  t.epochs = 10;
  t.learning_rate = 1e-3;
  return t;
}

std::vector<Tissue> ExperimentConfig::default_tissues() {
  return {
      {0.8, 0.8, {0.0, 0.0, 0.0}, {0.42, 0.36, 0.40}},
      {1.4, 1.0, {0.03, -0.02, 0.0}, {0.26, 0.22, 0.27}},
      {4.0, 1.0, {-0.05, 0.03, 0.02}, {0.09, 0.13, 0.11}},
  };
}

SequenceParams ExperimentConfig::sequence() const {
  SequenceParams p = echoes == 385 ? SequenceParams::mpnrage_defaults() : SequenceParams::desk_scale(echoes);
  p.inversion_efficiency = inversion_efficiency;
  return p;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(dims.nx >= 8 && dims.ny >= 8 && dims.nz >= 8, "phantom size must be >= 8 per axis");
  require(!tissues.empty(), "at least one tissue is required");
  for (const auto& t : tissues) {
    require(t.t1 > 0.0, "tissue T1 must be positive");
    require(t.pd >= 0.0, "tissue proton density must be >= 0");
    for (double r : t.radii) require(r > 0.0, "tissue radii must be positive");
  }
  require(echoes >= 2, "sequence.echoes must be >= 2");
  require(inversion_efficiency >= 0.0 && inversion_efficiency <= 1.0, "inversion_efficiency must lie in [0, 1]");
  require(dictionary_size >= 2, "dictionary_size must be >= 2");
  require(t1_min > 0.0 && t1_max > t1_min, "need 0 < t1_min < t1_max");
  require(rank >= 1 && rank <= std::min(dictionary_size, echoes) && (echoes < 4 || rank <= echoes / 4),
          "rank must lie in [1, min(dictionary_size, echoes / 4)]");
  require(spokes_per_frame >= 1, "spokes_per_frame must be >= 1");
  require(accelerated_spokes >= 1 && accelerated_spokes <= spokes_per_frame,
          "accelerated_spokes must lie in [1, spokes_per_frame]");
  require(readout >= 1 && coils >= 1, "readout and coils must be >= 1");
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(quadratic_mu > 0.0, "quadratic_mu must be positive");
  require(wavelet_gamma >= 0.0, "wavelet_gamma must be >= 0");
  require((dims.nx % 2 == 0 && dims.ny % 2 == 0 && dims.nz % 2 == 0) ||
              (method != Method::wavelet && reference_method != Method::wavelet),
          "the wavelet method needs even phantom dimensions");
  require(train_phantoms >= 1, "train.phantoms must be >= 1");
  require(snr_floor >= 0.0, "snr_floor must be >= 0");
  require(!contrast_frames.empty(), "at least one contrast frame is required");
  for (auto f : contrast_frames) require(f < echoes, "contrast frame " + std::to_string(f) + " out of range");
  try {
    recon.validate();
    train.validate();
    arch.validate();
    sequence().validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  require(arch.layers.front().in_channels == 2 && arch.layers.back().out_channels == 2,
          "network must map 2 channels to 2 channels");
}

ExperimentConfig ExperimentConfig::from_ini(const IniFile& ini) {
  ExperimentConfig c;
  bool tissues_given = false;
  std::vector<std::size_t> channels;
  std::optional<std::size_t> kernel;
  for (const auto& e : ini.entries) {
    const std::string& s = e.section;
    const std::string& k = e.key;
    const std::string& v = e.value;
    auto uint = [&] { return static_cast<std::size_t>(parse_uint(e, v)); };
    auto real = [&] { return parse_real(e, v); };
    auto boolean = [&] { return parse_bool(e, v); };

    if (s == "phantom") {
      if (k == "size") {
        const auto n = parse_uints(e);
        if (n.size() == 1) c.dims = {n[0], n[0], n[0]};
        else if (n.size() == 3) c.dims = {n[0], n[1], n[2]};
        else bad(e, "expected one or three sizes");
      } else if (k == "tissue") {
        const auto x = parse_reals(e);
        if (x.size() != 8) bad(e, "expected 't1 pd cx cy cz rx ry rz'");
        if (!tissues_given) c.tissues.clear(), tissues_given = true;
        c.tissues.push_back({x[0], x[1], {x[2], x[3], x[4]}, {x[5], x[6], x[7]}});
      } else bad(e, "unknown key");
    } else if (s == "sequence") {
      if (k == "echoes") c.echoes = uint();
      else if (k == "inversion_efficiency") c.inversion_efficiency = real();
      else if (k == "dictionary_size") c.dictionary_size = uint();
      else if (k == "t1_min") c.t1_min = real();
      else if (k == "t1_max") c.t1_max = real();
      else if (k == "rank") c.rank = uint();
      else bad(e, "unknown key");
    } else if (s == "acquisition") {
      if (k == "spokes_per_frame") c.spokes_per_frame = uint();
      else if (k == "accelerated_spokes") c.accelerated_spokes = uint();
      else if (k == "readout") c.readout = uint();
      else if (k == "coils") c.coils = uint();
      else if (k == "noise_sigma") c.noise_sigma = real();
      else bad(e, "unknown key");
    } else if (s == "recon") {
      auto& r = c.recon;
      if (k == "method") c.method = method_from_string(v);
      else if (k == "reference_method") c.reference_method = method_from_string(v);
      else if (k == "lambda") r.lambda = real();
      else if (k == "beta_schedule") {
        r.beta_schedule.clear();
        for (const auto& w : split_words(v)) {
          const auto colon = w.find(':');
          if (colon == std::string::npos) bad(e, "expected entries 'iteration:beta'");
          r.beta_schedule.push_back({static_cast<std::size_t>(parse_uint(e, w.substr(0, colon))),
                                     parse_real(e, w.substr(colon + 1))});
        }
      } else if (k == "outer_iters") r.outer_iters = uint();
      else if (k == "prox_steps") r.prox_steps = uint();
      else if (k == "prox_step_size") r.prox_step_size = real();
      else if (k == "prox_grad_tol") r.prox_grad_tol = real();
      else if (k == "cg_max_iters") r.cg_max_iters = uint();
      else if (k == "cg_residual_tol") r.cg_residual_tol = real();
      else if (k == "normalize") r.normalize = boolean();
      else if (k == "safeguard_prox") r.safeguard_prox = boolean();
      else if (k == "power_iters") r.power_iters = uint();
      else if (k == "init") {
        if (v == "adjoint") r.init = InitMode::adjoint;
        else if (v == "zero") r.init = InitMode::zero;
        else bad(e, "expected adjoint or zero");
      } else if (k == "quadratic_mu") c.quadratic_mu = real();
      else if (k == "wavelet_gamma") c.wavelet_gamma = real();
      else if (k == "wavelet_iters") c.wavelet_iters = uint();
      else bad(e, "unknown key");
    } else if (s == "train") {
      auto& t = c.train;
      if (k == "epochs") t.epochs = uint();
      else if (k == "learning_rate") t.learning_rate = real();
      else if (k == "batch_size") t.batch_size = uint();
      else if (k == "sigma_min") t.sigma_min = real();
      else if (k == "sigma_max") t.sigma_max = real();
      else if (k == "weighting") {
        if (v == "inverse_sigma") t.weighting = NoiseWeighting::inverse_sigma;
        else if (v == "unit") t.weighting = NoiseWeighting::unit;
        else bad(e, "expected inverse_sigma or unit");
      } else if (k == "phantoms") c.train_phantoms = uint();
      else if (k == "snr_floor") c.snr_floor = real();
      else if (k == "channels") channels = parse_uints(e);
      else if (k == "kernel") kernel = uint();
      else if (k == "activation") {
        try {
          c.arch.activation = activation_from_string(v);
        } catch (const DomainError& err) {
          bad(e, err.what());
        }
      } else if (k == "residual") c.arch.residual = boolean();
      else if (k == "model") c.model_path = v;
      else bad(e, "unknown key");
    } else if (s == "eval") {
      if (k == "contrast_frames") c.contrast_frames = parse_uints(e);
      else if (k == "record_wall_time") c.record_wall_time = boolean();
      else bad(e, "unknown key");
    } else if (s == "seeds") {
      if (k == "base") c.seed = parse_uint(e, v);
      else if (k == "trajectory") c.trajectory_seed = parse_uint(e, v);
      else if (k == "noise") c.noise_seed = parse_uint(e, v);
      else if (k == "init") c.init_seed = parse_uint(e, v);
      else if (k == "train") c.train_seed = parse_uint(e, v);
      else if (k == "train_phantom") c.train_phantom_seed = parse_uint(e, v);
      else bad(e, "unknown key");
    } else if (s == "output") {
      if (k == "dir") c.output_dir = v;
      else bad(e, "unknown key");
    } else {
      bad(e, "unknown section");
    }
  }
  if (!channels.empty() || kernel) {
    if (channels.empty()) {
      channels.push_back(c.arch.layers.front().in_channels);
      for (const auto& l : c.arch.layers) channels.push_back(l.out_channels);
    }
    if (channels.size() < 2) throw ConfigError("invalid config: train.channels needs at least two entries");
    const std::size_t kk = kernel.value_or(c.arch.layers.front().kernel);
    c.arch.layers.clear();
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) c.arch.layers.push_back({channels[i], channels[i + 1], kk});
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) { return from_ini(IniFile::load(path)); }

std::string ExperimentConfig::to_ini() const {
  std::ostringstream os;
  os << "[phantom]\nsize = " << dims.nx << ' ' << dims.ny << ' ' << dims.nz << '\n';
  for (const auto& t : tissues) {
    os << "tissue = " << fmt(t.t1) << ' ' << fmt(t.pd);
    for (double x : t.center) os << ' ' << fmt(x);
    for (double x : t.radii) os << ' ' << fmt(x);
    os << '\n';
  }
  os << "\n[sequence]\nechoes = " << echoes << "\ninversion_efficiency = " << fmt(inversion_efficiency)
     << "\ndictionary_size = " << dictionary_size << "\nt1_min = " << fmt(t1_min) << "\nt1_max = " << fmt(t1_max)
     << "\nrank = " << rank << '\n';
  os << "\n[acquisition]\nspokes_per_frame = " << spokes_per_frame << "\naccelerated_spokes = " << accelerated_spokes
     << "\nreadout = " << readout << "\ncoils = " << coils << "\nnoise_sigma = " << fmt(noise_sigma) << '\n';
  os << "\n[recon]\nmethod = " << to_string(method) << "\nreference_method = " << to_string(reference_method)
     << "\nlambda = " << fmt(recon.lambda) << "\nbeta_schedule =";
  for (const auto& b : recon.beta_schedule) os << ' ' << b.from_iteration << ':' << fmt(b.beta);
  os << "\nouter_iters = " << recon.outer_iters << "\nprox_steps = " << recon.prox_steps
     << "\nprox_step_size = " << fmt(recon.prox_step_size) << "\nprox_grad_tol = " << fmt(recon.prox_grad_tol)
     << "\ncg_max_iters = " << recon.cg_max_iters << "\ncg_residual_tol = " << fmt(recon.cg_residual_tol)
     << "\nnormalize = " << (recon.normalize ? "true" : "false")
     << "\nsafeguard_prox = " << (recon.safeguard_prox ? "true" : "false")
     << "\npower_iters = " << recon.power_iters << "\ninit = " << (recon.init == InitMode::adjoint ? "adjoint" : "zero")
     << "\nquadratic_mu = " << fmt(quadratic_mu) << "\nwavelet_gamma = " << fmt(wavelet_gamma)
     << "\nwavelet_iters = " << wavelet_iters << '\n';
  os << "\n[train]\nepochs = " << train.epochs << "\nlearning_rate = " << fmt(train.learning_rate)
     << "\nbatch_size = " << train.batch_size << "\nsigma_min = " << fmt(train.sigma_min)
     << "\nsigma_max = " << fmt(train.sigma_max)
     << "\nweighting = " << (train.weighting == NoiseWeighting::inverse_sigma ? "inverse_sigma" : "unit")
     << "\nphantoms = " << train_phantoms << "\nsnr_floor = " << fmt(snr_floor) << "\nchannels =";
  // One kernel size for all layers is all the config format can express.
  os << ' ' << arch.layers.front().in_channels;
  for (const auto& l : arch.layers) os << ' ' << l.out_channels;
  os << "\nkernel = " << arch.layers.front().kernel << "\nactivation = " << to_string(arch.activation)
     << "\nresidual = " << (arch.residual ? "true" : "false") << '\n';
  if (!model_path.empty()) os << "model = " << model_path << '\n';
  os << "\n[eval]\ncontrast_frames =";
  for (auto f : contrast_frames) os << ' ' << f;
  os << "\nrecord_wall_time = " << (record_wall_time ? "true" : "false") << '\n';
  os << "\n[seeds]\nbase = " << seed << '\n';
  auto opt = [&](const char* name, const std::optional<std::uint64_t>& v) {
    if (v) os << name << " = " << *v << '\n';
  };
  opt("trajectory", trajectory_seed);
  opt("noise", noise_seed);
  opt("init", init_seed);
  opt("train", train_seed);
  opt("train_phantom", train_phantom_seed);
  os << "\n[output]\ndir = " << output_dir.string() << '\n';
  return os.str();
}

}  // namespace ssmuse
