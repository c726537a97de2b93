#pragma once

// On-disk dataset contract (JSON manifest + raw .f32 tensors + newline
// concept ids), the preprocessing steps applied to raw epochs (baseline
// correction, block-average downsampling, even-length padding), and a
// seeded synthetic generator that stands in for real recordings in tests.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eegdwt/errors.hpp"
#include "eegdwt/rng.hpp"
#include "eegdwt/tensor.hpp"

namespace eegdwt::data {

// A batch of multichannel epochs: data is (B, C, T).
struct EEGTensor {
  Tensor data;
  std::string subject_id;
  std::vector<std::string> concept_ids;  // one per batch row
  double sample_rate_hz = 0.0;

  std::int64_t batch() const { return data.dim(0); }
  std::int64_t channels() const { return data.dim(1); }
  std::int64_t time() const { return data.dim(2); }

  void validate() const {
    if (data.rank() != 3) {
      throw ArgumentError(detail::str("EEG tensor must be (B,C,T), got ",
                                      shape_str(data.shape())));
    }
    if (batch() < 1 || channels() < 1 || time() < 2) {
      throw ArgumentError(detail::str("EEG tensor needs B>=1, C>=1, T>=2, got ",
                                      shape_str(data.shape())));
    }
    if (static_cast<std::int64_t>(concept_ids.size()) != batch()) {
      throw ArgumentError(detail::str("concept_ids length ", concept_ids.size(),
                                      " does not match batch ", batch()));
    }
    if (sample_rate_hz <= 0.0) throw ArgumentError("sample_rate_hz must be positive");
    if (!data.all_finite()) throw ArgumentError("EEG tensor contains non-finite values");
  }
};

// Embeddings are plain (N, D) tensors throughout the library.
using Embedding = Tensor;

// ---------------------------------------------------------------------------
// preprocessing

// Subtracts each trace's pre-stimulus mean (the first `prestim_samples`
// samples) from the whole trace, independently per (batch, channel).
inline EEGTensor baseline_correct(const EEGTensor& x, std::int64_t prestim_samples) {
  x.validate();
  const std::int64_t T = x.time();
  if (prestim_samples <= 0 || prestim_samples >= T) {
    throw ArgumentError(detail::str("prestim_samples must be in (0, ", T,
                                    "), got ", prestim_samples));
  }
  EEGTensor out = x;
  const std::int64_t rows = x.batch() * x.channels();
  double* p = out.data.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* trace = p + r * T;
    double m = 0.0;
    for (std::int64_t i = 0; i < prestim_samples; ++i) m += trace[i];
    m /= static_cast<double>(prestim_samples);
    for (std::int64_t i = 0; i < T; ++i) trace[i] -= m;
  }
  return out;
}

// Block-average decimation: every `factor` consecutive samples collapse to
// their mean. T must be divisible by factor; crop beforehand if it is not.
inline EEGTensor downsample(const EEGTensor& x, std::int64_t factor) {
  x.validate();
  if (factor < 1) throw ArgumentError(detail::str("factor must be >= 1, got ", factor));
  const std::int64_t T = x.time();
  if (T % factor != 0) {
    throw ArgumentError(detail::str("T=", T, " not divisible by factor=", factor,
                                    "; crop first"));
  }
  if (factor == 1) return x;
  const std::int64_t To = T / factor;
  EEGTensor out;
  out.data = Tensor({x.batch(), x.channels(), To});
  out.subject_id = x.subject_id;
  out.concept_ids = x.concept_ids;
  out.sample_rate_hz = x.sample_rate_hz / static_cast<double>(factor);
  const std::int64_t rows = x.batch() * x.channels();
  const double* src = x.data.data();
  double* dst = out.data.data();
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t o = 0; o < To; ++o) {
      double s = 0.0;
      for (std::int64_t j = 0; j < factor; ++j) s += src[r * T + o * factor + j];
      dst[r * To + o] = s * inv;
    }
  return out;
}

// Right-pads odd-length epochs by repeating the final sample, so the Haar
// block sees even T. Even inputs pass through untouched.
inline EEGTensor pad_to_even(const EEGTensor& x) {
  x.validate();
  const std::int64_t T = x.time();
  if (T % 2 == 0) return x;
  EEGTensor out;
  out.data = Tensor({x.batch(), x.channels(), T + 1});
  out.subject_id = x.subject_id;
  out.concept_ids = x.concept_ids;
  out.sample_rate_hz = x.sample_rate_hz;
  const std::int64_t rows = x.batch() * x.channels();
  const double* src = x.data.data();
  double* dst = out.data.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(src + r * T, src + (r + 1) * T, dst + r * (T + 1));
    dst[r * (T + 1) + T] = src[(r + 1) * T - 1];
  }
  return out;
}

// ---------------------------------------------------------------------------
// synthetic data

struct SyntheticSpec {
  std::int64_t n_classes = 8;
  std::int64_t samples_per_class = 16;
  std::int64_t channels = 64;
  std::int64_t time = 100;
  std::int64_t embedding_dim = 64;
  double signal_to_noise = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_classes < 1 || samples_per_class < 1 || channels < 1 || time < 1 ||
        embedding_dim < 1) {
      throw ArgumentError("synthetic spec counts must all be >= 1");
    }
    if (!(signal_to_noise > 0.0)) {
      throw ArgumentError("signal_to_noise must be positive");
    }
  }
};

struct SyntheticData {
  EEGTensor eeg;      // (N, C, T), N = n_classes * samples_per_class
  Embedding targets;  // (N, D), the class target vector repeated per sample
  std::vector<std::string> concept_ids;  // same as eeg.concept_ids
};

inline std::string synthetic_class_name(std::int64_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "class_%02lld", static_cast<long long>(k));
  return buf;
}

// Each class gets a fixed random channel-time template and a unit-norm
// random target vector; samples are template + N(0, 1/snr) noise. Everything
// is a pure function of the spec (including its seed).
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::int64_t K = spec.n_classes, S = spec.samples_per_class;
  const std::int64_t C = spec.channels, T = spec.time, D = spec.embedding_dim;
  const std::int64_t N = K * S;

  std::vector<Tensor> templates;
  templates.reserve(static_cast<std::size_t>(K));
  Tensor class_vecs({K, D});
  for (std::int64_t k = 0; k < K; ++k) {
    templates.push_back(Tensor::randn({C, T}, rng));
    for (std::int64_t d = 0; d < D; ++d) class_vecs.at(k, d) = rng.normal();
  }
  l2_normalize_rows_inplace(class_vecs);

  SyntheticData out;
  out.eeg.data = Tensor({N, C, T});
  out.eeg.subject_id = "synthetic";
  out.eeg.sample_rate_hz = 100.0;
  out.targets = Tensor({N, D});
  const double noise = 1.0 / spec.signal_to_noise;
  std::int64_t row = 0;
  for (std::int64_t k = 0; k < K; ++k) {
    const std::string name = synthetic_class_name(k);
    for (std::int64_t s = 0; s < S; ++s, ++row) {
      double* dst = out.eeg.data.data() + row * C * T;
      const double* tpl = templates[static_cast<std::size_t>(k)].data();
      for (std::int64_t i = 0; i < C * T; ++i) dst[i] = tpl[i] + noise * rng.normal();
      std::copy(class_vecs.data() + k * D, class_vecs.data() + (k + 1) * D,
                out.targets.data() + row * D);
      out.eeg.concept_ids.push_back(name);
      out.concept_ids.push_back(name);
    }
  }
  return out;
}

// Seeded stratified split; `val_fraction` of each class goes to validation.
struct SplitData {
  EEGTensor eeg;
  Embedding targets;
};

inline std::pair<SplitData, SplitData> stratified_split(const SyntheticData& all,
                                                        double val_fraction,
                                                        std::uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw ArgumentError("val_fraction must be in [0,1)");
  }
  std::map<std::string, std::vector<std::int64_t>> by_class;
  for (std::int64_t i = 0; i < all.eeg.batch(); ++i) {
    by_class[all.eeg.concept_ids[static_cast<std::size_t>(i)]].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::int64_t> train_idx, val_idx;
  for (auto& [name, idx] : by_class) {
    rng.shuffle(idx);
    const auto n_val = static_cast<std::int64_t>(
        val_fraction * static_cast<double>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (static_cast<std::int64_t>(i) < n_val ? val_idx : train_idx).push_back(idx[i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  auto take = [&](const std::vector<std::int64_t>& idx) {
    SplitData s;
    const std::int64_t C = all.eeg.channels(), T = all.eeg.time();
    const std::int64_t D = all.targets.dim(1);
    s.eeg.data = Tensor({static_cast<std::int64_t>(idx.size()), C, T});
    s.targets = Tensor({static_cast<std::int64_t>(idx.size()), D});
    s.eeg.subject_id = all.eeg.subject_id;
    s.eeg.sample_rate_hz = all.eeg.sample_rate_hz;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::int64_t src = idx[i];
      std::copy(all.eeg.data.data() + src * C * T,
                all.eeg.data.data() + (src + 1) * C * T,
                s.eeg.data.data() + static_cast<std::int64_t>(i) * C * T);
      std::copy(all.targets.data() + src * D, all.targets.data() + (src + 1) * D,
                s.targets.data() + static_cast<std::int64_t>(i) * D);
      s.eeg.concept_ids.push_back(all.eeg.concept_ids[static_cast<std::size_t>(src)]);
    }
    return s;
  };
  return {take(train_idx), take(val_idx)};
}

// ---------------------------------------------------------------------------
// manifest

struct SplitEntry {
  std::string subject;
  std::string tensor_path;            // raw .f32 (B,C,T)
  Shape shape;                        // (B,C,T)
  std::string concepts_path;          // newline-delimited, one per row
  std::string targets_path;           // optional raw .f32 (B,D)
  Shape targets_shape;                // (B,D) when targets_path set
};

struct DatasetManifest {
  std::string name;
  std::int64_t channels = 64;
  double sample_rate_hz = 100.0;
  std::int64_t window_samples = 100;
  std::int64_t embedding_dim = 0;
  std::vector<std::string> subjects;
  std::map<std::string, std::vector<SplitEntry>> splits;
  std::filesystem::path base_dir;  // directory the manifest was loaded from

  std::vector<std::string> split_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : splits) out.push_back(k);
    return out;
  }
};

inline std::vector<std::string> read_concept_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(detail::str("cannot open concept file: ", path.string()));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

inline void write_concept_lines(const std::filesystem::path& path,
                                const std::vector<std::string>& ids) {
  std::ofstream os(path);
  if (!os) throw IoError(detail::str("cannot open for write: ", path.string()));
  for (const auto& id : ids) os << id << "\n";
}

namespace detail_ {

inline void check_file_bytes(const std::filesystem::path& p, const Shape& shape) {
  std::error_code ec;
  const auto actual = std::filesystem::file_size(p, ec);
  if (ec) throw IoError(detail::str("missing file: ", p.string()));
  const std::int64_t expected = shape_numel(shape) * 4;
  if (static_cast<std::int64_t>(actual) != expected) {
    throw FormatError(detail::str("file ", p.string(), ": expected ", expected,
                                  " bytes for shape ", shape_str(shape),
                                  ", found ", actual, " bytes"));
  }
}

}  // namespace detail_

// Parses and fully validates a manifest: every referenced binary must match
// its declared shape byte-for-byte and every concept list its batch axis.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(detail::str("cannot open manifest: ", path.string()));
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(detail::str("manifest ", path.string(), ": ", e.what()));
  }
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    m.name = j.value("name", std::string("unnamed"));
    m.channels = j.value("channels", std::int64_t{64});
    m.sample_rate_hz = j.value("sample_rate_hz", 100.0);
    m.window_samples = j.value("window_samples", std::int64_t{100});
    m.embedding_dim = j.value("embedding_dim", std::int64_t{0});
    if (j.contains("subjects")) {
      m.subjects = j.at("subjects").get<std::vector<std::string>>();
    }
    for (const auto& [split, entries] : j.at("splits").items()) {
      for (const auto& e : entries) {
        SplitEntry se;
        se.subject = e.value("subject", std::string());
        se.tensor_path = e.at("tensor").get<std::string>();
        se.shape = e.at("shape").get<Shape>();
        se.concepts_path = e.at("concepts").get<std::string>();
        if (e.contains("targets")) {
          se.targets_path = e.at("targets").get<std::string>();
          se.targets_shape = e.at("targets_shape").get<Shape>();
        }
        m.splits[split].push_back(std::move(se));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(detail::str("manifest ", path.string(), ": ", e.what()));
  }

  for (const auto& [split, entries] : m.splits) {
    for (const auto& e : entries) {
      if (e.shape.size() != 3) {
        throw FormatError(detail::str("manifest split '", split,
                                      "': tensor shape must be (B,C,T)"));
      }
      detail_::check_file_bytes(m.base_dir / e.tensor_path, e.shape);
      const auto concepts = read_concept_lines(m.base_dir / e.concepts_path);
      if (static_cast<std::int64_t>(concepts.size()) != e.shape[0]) {
        throw FormatError(detail::str("manifest split '", split, "': ",
                                      concepts.size(), " concept ids vs batch ",
                                      e.shape[0]));
      }
      if (!e.targets_path.empty()) {
        if (e.targets_shape.size() != 2 || e.targets_shape[0] != e.shape[0]) {
          throw FormatError(detail::str("manifest split '", split,
                                        "': targets_shape must be (B,D) with B=",
                                        e.shape[0]));
        }
        detail_::check_file_bytes(m.base_dir / e.targets_path, e.targets_shape);
      }
    }
  }
  return m;
}

inline const SplitEntry& find_entry(const DatasetManifest& m,
                                    const std::string& split,
                                    const std::string& subject) {
  auto it = m.splits.find(split);
  if (it == m.splits.end()) {
    std::string names;
    for (const auto& s : m.split_names()) names += (names.empty() ? "" : ", ") + s;
    throw LookupError(detail::str("unknown split '", split,
                                  "'; available: ", names));
  }
  if (subject.empty() && it->second.size() == 1) return it->second.front();
  for (const auto& e : it->second) {
    if (e.subject == subject) return e;
  }
  throw LookupError(detail::str("no entry for subject '", subject,
                                "' in split '", split, "'"));
}

inline EEGTensor read_tensor(const DatasetManifest& m, const std::string& split,
                             const std::string& subject = std::string()) {
  const SplitEntry& e = find_entry(m, split, subject);
  EEGTensor out;
  out.data = f32io::read_file(m.base_dir / e.tensor_path, e.shape);
  out.subject_id = e.subject;
  out.concept_ids = read_concept_lines(m.base_dir / e.concepts_path);
  out.sample_rate_hz = m.sample_rate_hz;
  out.validate();
  return out;
}

inline Embedding read_targets(const DatasetManifest& m, const std::string& split,
                              const std::string& subject = std::string()) {
  const SplitEntry& e = find_entry(m, split, subject);
  if (e.targets_path.empty()) {
    throw LookupError(detail::str("split '", split, "' has no target embeddings"));
  }
  return f32io::read_file(m.base_dir / e.targets_path, e.targets_shape);
}

// Materializes a synthetic dataset as manifest + files (the layout the CLI
// and the external-interface tests consume).
inline std::filesystem::path write_synthetic_dataset(
    const SyntheticSpec& spec, double val_fraction,
    const std::filesystem::path& dir, const std::string& subject = "sub-01") {
  std::filesystem::create_directories(dir);
  const SyntheticData all = generate_synthetic(spec);
  auto [train, val] = stratified_split(all, val_fraction, spec.seed ^ 0x5eedULL);
  train.eeg.subject_id = subject;
  val.eeg.subject_id = subject;

  nlohmann::json j;
  j["name"] = detail::str("synthetic-", spec.n_classes, "x", spec.samples_per_class);
  j["channels"] = spec.channels;
  j["sample_rate_hz"] = 100.0;
  j["window_samples"] = spec.time;
  j["embedding_dim"] = spec.embedding_dim;
  j["subjects"] = {subject};

  auto emit = [&](const std::string& split, const SplitData& s) {
    f32io::write_file(dir / (split + "_eeg.f32"), s.eeg.data);
    f32io::write_file(dir / (split + "_targets.f32"), s.targets);
    write_concept_lines(dir / (split + "_concepts.txt"), s.eeg.concept_ids);
    nlohmann::json e;
    e["subject"] = subject;
    e["tensor"] = split + "_eeg.f32";
    e["shape"] = s.eeg.data.shape();
    e["concepts"] = split + "_concepts.txt";
    e["targets"] = split + "_targets.f32";
    e["targets_shape"] = s.targets.shape();
    j["splits"][split].push_back(e);
  };
  emit("train", train);
  if (val.eeg.data.numel() > 0 && val.eeg.batch() > 0) emit("val", val);

  const auto manifest_path = dir / "manifest.json";
  std::ofstream os(manifest_path);
  if (!os) throw IoError(detail::str("cannot write manifest: ", manifest_path.string()));
  os << j.dump(2) << "\n";
  return manifest_path;
}

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"n_classes", s.n_classes},
                     {"samples_per_class", s.samples_per_class},
                     {"channels", s.channels},
                     {"time", s.time},
                     {"embedding_dim", s.embedding_dim},
                     {"signal_to_noise", s.signal_to_noise},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.n_classes = j.value("n_classes", s.n_classes);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.channels = j.value("channels", s.channels);
  s.time = j.value("time", s.time);
  s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
  s.signal_to_noise = j.value("signal_to_noise", s.signal_to_noise);
  s.seed = j.value("seed", s.seed);
}

}  // namespace eegdwt::data
