// SPDX-License-Identifier: Apache-2.0
//
// Procedural moving-shape video generation, binary PGM frame I/O with
// sequence manifests, and deterministic window batching.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "strpm/tensor.hpp"

namespace strpm {

struct ShapeSpec {
  enum class Kind { Square, Circle };
  Kind kind = Kind::Square;
  double row = 0.0, col = 0.0;  // center, canvas coordinates
  double vrow = 0.0, vcol = 0.0;  // per-frame velocity
  double size = 0.0;              // edge length / diameter
  double intensity = 1.0;         // in (0, 1]
};

struct VideoSequence {
  std::vector<Tensor> frames;  // (1, c, H, W), pixels in [0,1]
  std::uint64_t seed = 0;
  std::vector<ShapeSpec> objects;  // spawn-time descriptors
};

// Objects move with constant velocity and reflect off the canvas borders:
// a velocity component negates when the bounding box would exit on that
// axis. Shapes render by hard thresholding at pixel centers; overlaps
// composite with max intensity. Deterministic in `seed`.
VideoSequence gen_sequence(std::uint64_t seed, int height, int width, int n_objects, int frames);

// Binary PGM (P5, maxval 255). Pixels quantize as
// round-half-away-from-zero(v * 255); reading returns q / 255.
void write_pgm(const Tensor& frame, const std::string& path);  // (1,1,H,W) in [0,1]
Tensor read_pgm(const std::string& path);

// Writes one PGM per frame channel (suffix _c<i> when multi-channel) plus
// manifest.txt listing the files in order, one per line. Returns the
// manifest path.
std::string save_sequence(const VideoSequence& seq, const std::string& dir);

// Reads the frames listed by a manifest; paths resolve relative to the
// manifest's directory. `channels` consecutive lines form one frame.
std::vector<Tensor> load_manifest(const std::string& manifest_path, int channels);

// One line per sequence manifest path, relative to the index location.
void save_dataset_index(const std::vector<std::string>& manifest_paths, const std::string& index_path);
std::vector<std::vector<Tensor>> load_dataset(const std::string& index_path, int channels);

struct Window {
  int seq = 0;
  int start = 0;
};

// All stride-1 windows of length context+horizon, sequence-major. Windows
// never cross sequence boundaries.
std::vector<Window> enumerate_windows(const std::vector<std::vector<Tensor>>& seqs, int context,
                                      int horizon);

// Stacks single-sample frames along the batch dimension.
Tensor stack_batch(const std::vector<Tensor>& frames);

// Endless stream of window batches with a seeded reshuffle at every epoch
// boundary. A batch holds context+horizon time-aligned (b,c,H,W) tensors.
class BatchIterator {
 public:
  BatchIterator(const std::vector<std::vector<Tensor>>& seqs, int batch, int context, int horizon,
                std::uint64_t seed);

  std::vector<Tensor> next();
  long long windows_per_epoch() const { return static_cast<long long>(windows_.size()); }

 private:
  void reshuffle();

  const std::vector<std::vector<Tensor>>* seqs_;
  std::vector<Window> windows_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  int batch_, context_, horizon_;
  std::uint64_t rng_state_;
};

}  // namespace strpm
