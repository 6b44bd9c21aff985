#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vidcap/error.hpp"
#include "vidcap/rng.hpp"
#include "vidcap/tensor.hpp"
#include "vidcap/text.hpp"

namespace vidcap {

// Frame-feature ingestion: the ".vcf" binary format (32-bit little-endian
// floats), uniform frame sampling, mean pooling, TSV manifests, and a seeded
// synthetic dataset generator that plants a learnable feature->caption signal.

struct FeatureMatrix {
  int n_frames = 0;
  int dim = 0;
  std::vector<float> values;  // row-major [n_frames, dim]

  float at(int i, int j) const { return values[static_cast<std::size_t>(i) * dim + j]; }
};

inline void validate_features(const FeatureMatrix& m, const char* who) {
  if (m.n_frames < 1 || m.dim < 1)
    throw DimensionError(std::string(who) + ": feature matrix must be at least 1x1");
  if (m.values.size() != static_cast<std::size_t>(m.n_frames) * m.dim)
    throw DimensionError(std::string(who) + ": value count does not match declared shape");
  for (float v : m.values)
    if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite feature value");
}

inline Tensor to_tensor(const FeatureMatrix& m) {
  Tensor t({m.n_frames, m.dim});
  for (std::size_t i = 0; i < m.values.size(); ++i) t.data[i] = static_cast<double>(m.values[i]);
  return t;
}

// index_i = floor(i * n_total / n_wanted); non-decreasing, duplicates allowed
// when the clip is shorter than the request.
inline std::vector<int> sample_frame_indices(int n_total, int n_wanted) {
  if (n_total < 1) throw UsageError("sample_frame_indices: n_total must be at least 1");
  if (n_wanted < 1) throw UsageError("sample_frame_indices: n_wanted must be at least 1");
  std::vector<int> idx(n_wanted);
  for (int i = 0; i < n_wanted; ++i)
    idx[i] = static_cast<int>((static_cast<std::int64_t>(i) * n_total) / n_wanted);
  return idx;
}

inline std::vector<double> mean_pool(const FeatureMatrix& m) {
  validate_features(m, "mean_pool");
  std::vector<double> out(m.dim, 0.0);
  for (int i = 0; i < m.n_frames; ++i)
    for (int j = 0; j < m.dim; ++j) out[j] += m.at(i, j);
  for (double& v : out) v /= m.n_frames;
  return out;
}

namespace detail {

inline void put_u32_le(std::string& s, std::uint32_t v) {
  s += static_cast<char>(v & 0xff);
  s += static_cast<char>((v >> 8) & 0xff);
  s += static_cast<char>((v >> 16) & 0xff);
  s += static_cast<char>((v >> 24) & 0xff);
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

// Layout: "VCF1" | n_frames u32 LE | dim u32 LE | reserved u32 LE (zero) |
// n_frames*dim f32 LE, row-major.
inline void write_features(const std::filesystem::path& path, const FeatureMatrix& m) {
  validate_features(m, "write_features");
  std::string buf;
  buf.reserve(16 + m.values.size() * 4);
  buf += "VCF1";
  detail::put_u32_le(buf, static_cast<std::uint32_t>(m.n_frames));
  detail::put_u32_le(buf, static_cast<std::uint32_t>(m.dim));
  detail::put_u32_le(buf, 0);
  for (float v : m.values) detail::put_u32_le(buf, std::bit_cast<std::uint32_t>(v));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_features: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write_features: short write to " + path.string());
}

inline FeatureMatrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("read_features: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16)
    throw FormatError(path.string() + ": truncated header at byte " + std::to_string(bytes.size()));
  if (bytes.compare(0, 4, "VCF1") != 0)
    throw FormatError(path.string() + ": bad magic/version at byte 0");
  FeatureMatrix m;
  m.n_frames = static_cast<int>(detail::get_u32_le(p + 4));
  m.dim = static_cast<int>(detail::get_u32_le(p + 8));
  if (m.n_frames < 1 || m.dim < 1)
    throw FormatError(path.string() + ": invalid shape in header at byte 4");
  if (detail::get_u32_le(p + 12) != 0)
    throw FormatError(path.string() + ": nonzero reserved field at byte 12");
  const std::size_t expected = 16 + static_cast<std::size_t>(m.n_frames) * m.dim * 4;
  if (bytes.size() != expected)
    throw FormatError(path.string() + ": payload size mismatch, expected " +
                      std::to_string(expected) + " bytes, found " + std::to_string(bytes.size()) +
                      " (declared payload ends at byte " + std::to_string(expected) + ")");
  m.values.resize(static_cast<std::size_t>(m.n_frames) * m.dim);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const float v = std::bit_cast<float>(detail::get_u32_le(p + 16 + i * 4));
    if (!std::isfinite(v))
      throw FormatError(path.string() + ": non-finite value at byte " + std::to_string(16 + i * 4));
    m.values[i] = v;
  }
  return m;
}

struct VideoExample {
  std::string video_id;
  FeatureMatrix features;
  std::vector<CaptionRecord> references;
  std::string source_path;  // resolved feature file location, when file-backed
};

// TSV manifest: video_id <TAB> feature_path <TAB> caption. Repeated video_id
// adds references; '#' lines are comments. Feature paths resolve relative to
// the manifest's directory.
inline std::vector<VideoExample> load_manifest(const std::filesystem::path& path,
                                               const Vocab* vocab = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("load_manifest: cannot open " + path.string());
  const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";

  std::vector<VideoExample> examples;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::string> feature_of;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 3)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns, found " +
                      std::to_string(cols.size()));
    const std::string& vid = cols[0];
    const std::string& fpath = cols[1];
    if (vid.empty() || fpath.empty())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty video_id or path");
    auto known = feature_of.find(vid);
    if (known != feature_of.end()) {
      if (known->second != fpath)
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": conflicting feature_path for video " + vid);
    } else {
      feature_of.emplace(vid, fpath);
    }
    CaptionRecord rec;
    rec.video_id = vid;
    rec.text = cols[2];
    rec.tokens = tokenize(rec.text);
    if (vocab != nullptr) rec.ids = ids_for(rec.tokens, *vocab);
    auto it = index.find(vid);
    if (it == index.end()) {
      std::filesystem::path resolved = std::filesystem::path(fpath).is_absolute()
                                           ? std::filesystem::path(fpath)
                                           : base / fpath;
      if (!std::filesystem::exists(resolved))
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": missing feature file " +
                        resolved.string());
      VideoExample ex;
      ex.video_id = vid;
      ex.features = read_features(resolved);
      ex.source_path = std::filesystem::absolute(resolved).lexically_normal().string();
      ex.references.push_back(std::move(rec));
      index.emplace(vid, examples.size());
      examples.push_back(std::move(ex));
    } else {
      examples[it->second].references.push_back(std::move(rec));
    }
  }
  return examples;
}

// Short Devanagari template sentences, one per archetype.
inline const std::vector<std::string>& synth_caption_templates() {
  static const std::vector<std::string> kTemplates = {
      "एक कुकुर मैदानमा दौडिरहेको छ।",
      "एक मानिस गीत गाउँदै छ।",
      "एक बिरालो भुइँमा सुतिरहेको छ।",
      "केटाहरू फुटबल खेलिरहेका छन्।",
      "एक महिला खाना पकाउँदै छिन्।",
      "एक चरा आकाशमा उडिरहेको छ।",
      "बच्चाहरू पानीमा पौडी खेल्छन्।",
      "एक घोडा घाँस खाइरहेको छ।",
  };
  return kTemplates;
}

struct SynthConfig {
  std::uint64_t seed = 0;
  int n_videos = 16;
  int archetypes = 4;
  int t_enc = 28;
  int d_feat = 4096;
  double noise = 0.1;
  std::filesystem::path out_dir;
};

struct SynthDataset {
  std::filesystem::path manifest_path;
  std::vector<std::string> video_ids;
  std::vector<int> archetype;         // per video
  std::vector<std::string> captions;  // per video
};

// Deterministic given the seed: video v carries archetype v % k as a base
// feature block plus scaled noise, captioned by that archetype's template.
inline SynthDataset synth_dataset(const SynthConfig& cfg) {
  if (cfg.n_videos < 1) throw UsageError("synth_dataset: n_videos must be at least 1");
  if (cfg.archetypes < 1 ||
      cfg.archetypes > static_cast<int>(synth_caption_templates().size()))
    throw UsageError("synth_dataset: archetypes must be in 1.." +
                     std::to_string(synth_caption_templates().size()));
  if (cfg.t_enc < 1 || cfg.d_feat < 1)
    throw UsageError("synth_dataset: t_enc and d_feat must be positive");

  std::filesystem::create_directories(cfg.out_dir / "features");
  Rng rng = derive_stream(cfg.seed, "synth");

  const std::size_t n = static_cast<std::size_t>(cfg.t_enc) * cfg.d_feat;
  std::vector<std::vector<double>> bases(cfg.archetypes, std::vector<double>(n));
  for (auto& base : bases)
    for (double& v : base) v = rng.normal();

  SynthDataset out;
  std::string manifest;
  for (int v = 0; v < cfg.n_videos; ++v) {
    char id[16];
    std::snprintf(id, sizeof id, "vid%04d", v);
    const int arch = v % cfg.archetypes;
    FeatureMatrix m;
    m.n_frames = cfg.t_enc;
    m.dim = cfg.d_feat;
    m.values.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      m.values[i] = static_cast<float>(bases[arch][i] + cfg.noise * rng.normal());
    const std::string rel = std::string("features/") + id + ".vcf";
    write_features(cfg.out_dir / rel, m);
    manifest += id;
    manifest += '\t';
    manifest += rel;
    manifest += '\t';
    manifest += synth_caption_templates()[arch];
    manifest += '\n';
    out.video_ids.push_back(id);
    out.archetype.push_back(arch);
    out.captions.push_back(synth_caption_templates()[arch]);
  }
  out.manifest_path = cfg.out_dir / "manifest.tsv";
  std::ofstream mf(out.manifest_path, std::ios::binary | std::ios::trunc);
  if (!mf) throw DataError("synth_dataset: cannot write " + out.manifest_path.string());
  mf << manifest;
  return out;
}

}  // namespace vidcap
