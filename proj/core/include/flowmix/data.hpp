#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowmix/augment.hpp"
#include "flowmix/types.hpp"

namespace flowmix {

struct LabeledSample {
  Image frame1;
  Image frame2;
  FlowField gt_flow;
  ValidMask valid;
  std::string id;
};

struct UnlabeledSample {
  Image frame1;
  Image frame2;
  std::string id;
};

/// Appearance effects applied to both rendered frames after the scene is built;
/// they never change the ground truth.
struct SceneEffects {
  /// Per-frame opacity of an unrelated static texture layer, drawn from U(0, max).
  double overlay_max_alpha = 0.0;
  /// Gaussian blur of the second frame, sigma in pixels.
  double blur_sigma = 0.0;
  double noise_sigma = 0.0;

  bool any() const noexcept { return overlay_max_alpha > 0.0 || blur_sigma > 0.0 || noise_sigma > 0.0; }
};

struct SynthConfig {
  int height = 64;
  int width = 64;
  int sprite_count_min = 1;
  int sprite_count_max = 4;
  /// Bound on |t_u|, |t_v| for every layer, in pixels.
  double max_translation = 6.0;
  double max_rotation_deg = 10.0;
  int noise_octaves = 4;
  /// Lattice period of the coarsest noise octave, in pixels; octaves halve it.
  double noise_base_period = 32.0;
  SceneEffects effects{};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Sample plus the per-pixel index of the visible layer in each frame
/// (0 = background, k = k-th sprite).
struct SynthScene {
  LabeledSample sample;
  Grid<std::int16_t, 1> layers1;
  Grid<std::int16_t, 1> layers2;
};

SynthScene generate_scene(const SynthConfig& cfg, Rng& rng, std::string id = "synth");
LabeledSample generate_sample(const SynthConfig& cfg, Rng& rng, std::string id = "synth");

/// `count` samples, sample i drawn from its own stream derived from (cfg.seed, i).
std::vector<LabeledSample> generate_dataset(const SynthConfig& cfg, int count, const std::string& id_prefix = "s");
std::vector<UnlabeledSample> generate_unlabeled(const SynthConfig& cfg, int count, const std::string& id_prefix = "u");

/// Every frame of every sample, for distractor draws.
FramePool make_frame_pool(const std::vector<LabeledSample>& samples);
FramePool make_frame_pool(const std::vector<UnlabeledSample>& samples);

/// Derives an independent 64-bit seed from a base seed and a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

// --- flow files -------------------------------------------------------------

inline constexpr float kFloMagic = 202021.25f;  // bytes "PIEH"
inline constexpr float kFloUnknownThreshold = 1e9f;

struct FlowWithMask {
  FlowField flow;
  ValidMask valid;
};

/// Middlebury .flo. Components with magnitude >= 1e9 mark invalid pixels; those read back as zero flow.
FlowWithMask read_flo(const std::filesystem::path& path);
void write_flo(const FlowField& field, const std::filesystem::path& path);
/// Writes 1e10 for both components of invalid pixels.
void write_flo(const FlowField& field, const ValidMask& valid, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_flo(const FlowField& field, const ValidMask* valid = nullptr);
FlowWithMask decode_flo(const std::vector<std::uint8_t>& bytes);

/// KITTI 16-bit RGB PNG: u = (R - 2^15) / 64, v = (G - 2^15) / 64, valid = B > 0.
FlowWithMask read_kitti_png(const std::filesystem::path& path);
void write_kitti_png(const FlowField& field, const ValidMask& valid, const std::filesystem::path& path);

// --- images -------------------------------------------------------------------

/// 8-bit RGB PNG <-> [0, 1] image.
Image read_png_image(const std::filesystem::path& path);
void write_png_image(const Image& image, const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, std::string>>& text = {});

/// Raw 16-bit RGB PNG access, used by the KITTI codec.
struct Png16 {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> rgb;
};
Png16 read_png16(const std::filesystem::path& path);
void write_png16(const Png16& png, const std::filesystem::path& path);

/// Reads back tEXt chunks of a PNG file.
std::vector<std::pair<std::string, std::string>> read_png_text(const std::filesystem::path& path);

// --- manifests ----------------------------------------------------------------

enum class FlowFormat { kFlo, kKittiPng };

struct ManifestEntry {
  std::string id;
  std::filesystem::path frame1;
  std::filesystem::path frame2;
  std::filesystem::path flow;
};

/// Line-oriented: `<id> <frame1> <frame2> <flow>`; relative paths resolve against the
/// manifest's directory; blank lines and lines starting with '#' are ignored.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

std::vector<LabeledSample> load_dataset(const std::filesystem::path& manifest, FlowFormat format);

/// Writes frames as PNG and flows in `format`, plus `manifest.txt`. Returns the manifest path.
std::filesystem::path save_dataset(const std::vector<LabeledSample>& samples, const std::filesystem::path& dir,
                                   FlowFormat format);

// --- batching -----------------------------------------------------------------

/// Indices into the labeled and unlabeled sources for one training step.
struct PairedBatch {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

/// Endless shuffled pass over [0, count), reshuffled each time it is exhausted.
class IndexCycler {
 public:
  IndexCycler(std::size_t count, std::uint64_t seed);
  std::size_t next();

 private:
  void reshuffle();
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

/// Yields equal-size labeled and unlabeled index batches, one of each per step.
/// Each source reshuffles whenever it is exhausted; the shorter one cycles.
class PairedBatchStream {
 public:
  PairedBatchStream(std::size_t labeled_count, std::size_t unlabeled_count, std::size_t batch_size,
                    std::uint64_t seed);

  PairedBatch next();
  /// Steps per epoch: the longer source divided by the batch size (at least one).
  std::size_t steps_per_epoch() const noexcept;

 private:
  IndexCycler labeled_;
  IndexCycler unlabeled_;
  std::size_t labeled_count_;
  std::size_t unlabeled_count_;
  std::size_t batch_size_;
};

/// Labeled-only batches.
class BatchStream {
 public:
  BatchStream(std::size_t count, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  IndexCycler cycler_;
  std::size_t batch_size_;
};

}  // namespace flowmix
