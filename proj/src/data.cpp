// SPDX-License-Identifier: Apache-2.0

#include "strpm/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace strpm {

namespace {

struct GenRng {
  std::mt19937_64 gen;
  explicit GenRng(std::uint64_t seed) : gen(seed) {}
  double uniform01() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(gen() % static_cast<std::uint64_t>(hi - lo + 1));
  }
};

void render(Tensor& frame, const std::vector<ShapeSpec>& objects) {
  const Shape& s = frame.shape();
  for (const ShapeSpec& o : objects) {
    const double half = o.size / 2.0;
    const int r0 = std::max(0, static_cast<int>(std::floor(o.row - half - 1.0)));
    const int r1 = std::min(s.h - 1, static_cast<int>(std::ceil(o.row + half + 1.0)));
    const int c0 = std::max(0, static_cast<int>(std::floor(o.col - half - 1.0)));
    const int c1 = std::min(s.w - 1, static_cast<int>(std::ceil(o.col + half + 1.0)));
    for (int r = r0; r <= r1; ++r) {
      const double cy = r + 0.5;
      for (int c = c0; c <= c1; ++c) {
        const double cx = c + 0.5;
        bool inside;
        if (o.kind == ShapeSpec::Kind::Square) {
          inside = std::abs(cy - o.row) <= half && std::abs(cx - o.col) <= half;
        } else {
          const double dy = cy - o.row, dx = cx - o.col;
          inside = dy * dy + dx * dx <= half * half;
        }
        if (!inside) continue;
        for (int ch = 0; ch < s.c; ++ch) frame.at(0, ch, r, c) = std::max(frame.at(0, ch, r, c), o.intensity);
      }
    }
  }
}

void advance(ShapeSpec& o, int height, int width) {
  const double half = o.size / 2.0;
  double nr = o.row + o.vrow;
  if (nr - half < 0.0 || nr + half > height) {
    o.vrow = -o.vrow;
    nr = o.row + o.vrow;
  }
  double nc = o.col + o.vcol;
  if (nc - half < 0.0 || nc + half > width) {
    o.vcol = -o.vcol;
    nc = o.col + o.vcol;
  }
  o.row = nr;
  o.col = nc;
}

}  // namespace

VideoSequence gen_sequence(std::uint64_t seed, int height, int width, int n_objects, int frames) {
  check(height >= 8 && width >= 8, "gen_sequence: canvas must be at least 8x8");
  check(n_objects >= 1, "gen_sequence: need at least one object");
  check(frames >= 2, "gen_sequence: need at least two frames");

  GenRng rng(seed);
  const double max_speed = 2.0;
  std::vector<ShapeSpec> objects;
  for (int i = 0; i < n_objects; ++i) {
    ShapeSpec o;
    o.kind = rng.uniform_int(0, 1) == 0 ? ShapeSpec::Kind::Square : ShapeSpec::Kind::Circle;
    const double lo = static_cast<double>(std::min(height, width));
    o.size = rng.uniform(lo / 5.0, lo / 3.0);
    const double margin = o.size / 2.0 + max_speed + 0.5;
    o.row = rng.uniform(margin, height - margin);
    o.col = rng.uniform(margin, width - margin);
    do {
      o.vrow = rng.uniform_int(-2, 2);
      o.vcol = rng.uniform_int(-2, 2);
    } while (o.vrow == 0.0 && o.vcol == 0.0);
    o.intensity = rng.uniform(0.5, 1.0);
    objects.push_back(o);
  }

  VideoSequence seq;
  seq.seed = seed;
  seq.objects = objects;
  std::vector<ShapeSpec> state = objects;
  for (int t = 0; t < frames; ++t) {
    if (t > 0)
      for (ShapeSpec& o : state) advance(o, height, width);
    Tensor frame = Tensor::zeros({1, 1, height, width});
    render(frame, state);
    seq.frames.push_back(frame);
  }
  return seq;
}

void write_pgm(const Tensor& frame, const std::string& path) {
  const Shape& s = frame.shape();
  check(s.n == 1 && s.c == 1, "write_pgm: frame must be single-sample single-channel, got " + s.str());
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "write_pgm: cannot open " + path);
  out << "P5\n" << s.w << " " << s.h << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<size_t>(s.h) * s.w);
  const double* d = frame.data();
  for (size_t i = 0; i < bytes.size(); ++i) {
    const double v = d[i];
    check(v >= 0.0 && v <= 1.0, "write_pgm: pixel value " + std::to_string(v) + " outside [0,1]");
    long q = std::lround(v * 255.0);  // rounds half away from zero
    bytes[i] = static_cast<unsigned char>(std::clamp(q, 0L, 255L));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check(out.good(), "write_pgm: write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "read_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  check(magic == "P5", "read_pgm: bad magic '" + magic + "' in " + path);
  long long w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  check(in.good() && w > 0 && h > 0, "read_pgm: malformed header in " + path);
  check(maxval == 255, "read_pgm: unsupported maxval " + std::to_string(maxval) + " in " + path);
  in.get();  // single whitespace after the header
  std::vector<unsigned char> bytes(static_cast<size_t>(w * h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check(in.gcount() == static_cast<std::streamsize>(bytes.size()), "read_pgm: truncated data in " + path);
  Tensor frame = Tensor::zeros({1, 1, static_cast<int>(h), static_cast<int>(w)});
  double* d = frame.data();
  for (size_t i = 0; i < bytes.size(); ++i) d[i] = static_cast<double>(bytes[i]) / 255.0;
  return frame;
}

std::string save_sequence(const VideoSequence& seq, const std::string& dir) {
  fs::create_directories(dir);
  std::vector<std::string> lines;
  for (size_t t = 0; t < seq.frames.size(); ++t) {
    const Tensor& frame = seq.frames[t];
    const Shape& s = frame.shape();
    char name[64];
    for (int ch = 0; ch < s.c; ++ch) {
      if (s.c == 1)
        std::snprintf(name, sizeof(name), "frame_%04zu.pgm", t);
      else
        std::snprintf(name, sizeof(name), "frame_%04zu_c%d.pgm", t, ch);
      Tensor plane = Tensor::zeros({1, 1, s.h, s.w});
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) plane.at(0, 0, y, x) = frame.at(0, ch, y, x);
      write_pgm(plane, (fs::path(dir) / name).string());
      lines.push_back(name);
    }
  }
  const std::string manifest = (fs::path(dir) / "manifest.txt").string();
  std::ofstream out(manifest, std::ios::binary);
  check(out.good(), "save_sequence: cannot open " + manifest);
  for (const std::string& l : lines) out << l << "\n";
  return manifest;
}

std::vector<Tensor> load_manifest(const std::string& manifest_path, int channels) {
  check(channels >= 1, "load_manifest: channels must be >= 1");
  std::ifstream in(manifest_path);
  check(in.good(), "load_manifest: cannot open " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  check(!lines.empty() && lines.size() % static_cast<size_t>(channels) == 0,
        "load_manifest: entry count " + std::to_string(lines.size()) + " is not a multiple of " +
            std::to_string(channels) + " channels in " + manifest_path);
  std::vector<Tensor> frames;
  for (size_t i = 0; i < lines.size(); i += static_cast<size_t>(channels)) {
    std::vector<Tensor> planes;
    for (int ch = 0; ch < channels; ++ch) planes.push_back(read_pgm((base / lines[i + ch]).string()));
    frames.push_back(channels == 1 ? planes[0] : concat_channels(planes));
  }
  return frames;
}

void save_dataset_index(const std::vector<std::string>& manifest_paths, const std::string& index_path) {
  std::ofstream out(index_path, std::ios::binary);
  check(out.good(), "save_dataset_index: cannot open " + index_path);
  for (const std::string& p : manifest_paths) out << p << "\n";
}

std::vector<std::vector<Tensor>> load_dataset(const std::string& index_path, int channels) {
  std::ifstream in(index_path);
  check(in.good(), "load_dataset: cannot open " + index_path);
  const fs::path base = fs::path(index_path).parent_path();
  std::vector<std::vector<Tensor>> seqs;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    seqs.push_back(load_manifest((base / line).string(), channels));
  }
  check(!seqs.empty(), "load_dataset: no sequences listed in " + index_path);
  return seqs;
}

std::vector<Window> enumerate_windows(const std::vector<std::vector<Tensor>>& seqs, int context,
                                      int horizon) {
  check(context >= 1 && horizon >= 1, "enumerate_windows: context and horizon must be >= 1");
  const int len = context + horizon;
  std::vector<Window> windows;
  for (size_t s = 0; s < seqs.size(); ++s) {
    const int t = static_cast<int>(seqs[s].size());
    check(t >= len, "enumerate_windows: sequence " + std::to_string(s) + " has " + std::to_string(t) +
                        " frames, need at least " + std::to_string(len));
    for (int start = 0; start + len <= t; ++start) windows.push_back({static_cast<int>(s), start});
  }
  return windows;
}

Tensor stack_batch(const std::vector<Tensor>& frames) {
  check(!frames.empty(), "stack_batch: empty frame list");
  const Shape& s0 = frames[0].shape();
  check(s0.n == 1, "stack_batch: inputs must be single-sample tensors");
  Tensor out = Tensor::zeros({static_cast<int>(frames.size()), s0.c, s0.h, s0.w});
  const long long per = s0.numel();
  for (size_t i = 0; i < frames.size(); ++i) {
    check(frames[i].shape() == s0, "stack_batch: frame shape mismatch");
    std::copy(frames[i].data(), frames[i].data() + per, out.data() + static_cast<long long>(i) * per);
  }
  return out;
}

BatchIterator::BatchIterator(const std::vector<std::vector<Tensor>>& seqs, int batch, int context,
                             int horizon, std::uint64_t seed)
    : seqs_(&seqs), batch_(batch), context_(context), horizon_(horizon), rng_state_(seed) {
  check(batch >= 1, "batch_iter: batch must be >= 1");
  windows_ = enumerate_windows(seqs, context, horizon);
  order_.resize(windows_.size());
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  reshuffle();
}

void BatchIterator::reshuffle() {
  // Hand-rolled Fisher-Yates for bit-identical ordering across platforms.
  std::mt19937_64 gen(rng_state_);
  for (size_t i = order_.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(gen() % i);
    std::swap(order_[i - 1], order_[j]);
  }
  rng_state_ = gen();  // distinct permutation stream per epoch
  cursor_ = 0;
}

std::vector<Tensor> BatchIterator::next() {
  if (cursor_ >= order_.size()) reshuffle();
  const size_t take = std::min(static_cast<size_t>(batch_), order_.size() - cursor_);
  const int len = context_ + horizon_;
  std::vector<Tensor> out;
  for (int t = 0; t < len; ++t) {
    std::vector<Tensor> slot;
    for (size_t b = 0; b < take; ++b) {
      const Window& w = windows_[order_[cursor_ + b]];
      slot.push_back((*seqs_)[static_cast<size_t>(w.seq)][static_cast<size_t>(w.start + t)]);
    }
    out.push_back(stack_batch(slot));
  }
  cursor_ += take;
  return out;
}

}  // namespace strpm
