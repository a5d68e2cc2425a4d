// SPDX-License-Identifier: Apache-2.0

#include "strpm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace strpm {

namespace {

constexpr char kMagic[6] = {'S', 'T', 'R', 'P', 'M', '1'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n, const char* what) {
    check(pos + n <= buf.size(), std::string("checkpoint: truncated file (reading ") + what + ") " + path);
  }
  std::uint16_t u16() {
    need(2, "u16");
    const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 2;
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    need(4, "u32");
    const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

ArrayRecord to_record(const std::string& name, const Tensor& t) {
  ArrayRecord r;
  r.name = name;
  const Shape& s = t.shape();
  r.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
            static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  r.values.reserve(static_cast<size_t>(t.numel()));
  for (long long i = 0; i < t.numel(); ++i) r.values.push_back(static_cast<float>(t.data()[i]));
  return r;
}

ArrayRecord moments_record(const std::string& name, const std::vector<double>& m,
                           const std::vector<std::uint32_t>& dims) {
  ArrayRecord r;
  r.name = name;
  r.dims = dims;
  r.values.reserve(m.size());
  for (double v : m) r.values.push_back(static_cast<float>(v));
  return r;
}

void append_adam(std::vector<ArrayRecord>& arrays, const std::string& prefix, const Adam& adam,
                 const std::vector<NamedParam>& params) {
  for (size_t i = 0; i < params.size(); ++i) {
    const Shape& s = params[i].tensor.shape();
    const std::vector<std::uint32_t> dims = {
        static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
        static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
    arrays.push_back(moments_record(prefix + ".m." + params[i].name, adam.m()[i], dims));
    arrays.push_back(moments_record(prefix + ".v." + params[i].name, adam.v()[i], dims));
  }
}

// Keys that must agree between a checkpoint and the system it loads into.
const char* kArchKeys[] = {"layers",     "hidden",     "kernel",         "tau",
                           "theta",      "downsample", "in_channels",    "residual",
                           "shared_encoder", "disc_layers", "disc_width", "disc_tap"};

std::string kv_get(const std::vector<std::pair<std::string, std::string>>& kv, const std::string& key) {
  for (const auto& [k, v] : kv)
    if (k == key) return v;
  fail("checkpoint: config snapshot is missing key '" + key + "'");
}

}  // namespace

CheckpointData snapshot(const System& sys) {
  CheckpointData ckpt;
  ckpt.config = config_to_kv(sys.cfg);
  ckpt.adam_p_steps = sys.adam_p.step_count();
  ckpt.adam_d_steps = sys.adam_d.step_count();
  for (const NamedParam& p : sys.model.params()) ckpt.arrays.push_back(to_record(p.name, p.tensor));
  for (const NamedParam& p : sys.disc.params()) ckpt.arrays.push_back(to_record(p.name, p.tensor));
  append_adam(ckpt.arrays, "adam_p", sys.adam_p, sys.model.params());
  append_adam(ckpt.arrays, "adam_d", sys.adam_d, sys.disc.params());
  return ckpt;
}

void save_checkpoint_file(const CheckpointData& ckpt, const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  std::string cfg_text;
  for (const auto& [k, v] : ckpt.config) cfg_text += k + " = " + v + "\n";
  cfg_text += "adam_p_steps = " + std::to_string(ckpt.adam_p_steps) + "\n";
  cfg_text += "adam_d_steps = " + std::to_string(ckpt.adam_d_steps) + "\n";
  put_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
  out += cfg_text;
  put_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const ArrayRecord& a : ckpt.arrays) {
    put_u16(out, static_cast<std::uint16_t>(a.name.size()));
    out += a.name;
    put_u32(out, static_cast<std::uint32_t>(a.dims.size()));
    std::uint64_t count = 1;
    for (std::uint32_t d : a.dims) {
      put_u32(out, d);
      count *= d;
    }
    check(count == a.values.size(), "checkpoint: array " + a.name + " dims do not match value count");
    for (float v : a.values) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "checkpoint: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  check(f.good(), "checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  check(buf.size() >= sizeof(kMagic), "checkpoint: truncated file " + path);
  check(std::memcmp(buf.data(), kMagic, sizeof(kMagic)) == 0, "checkpoint: bad magic in " + path);

  Reader r{buf, sizeof(kMagic), path};
  CheckpointData ckpt;
  const std::uint32_t cfg_len = r.u32();
  const std::string cfg_text = r.bytes(cfg_len, "config snapshot");
  size_t start = 0;
  while (start < cfg_text.size()) {
    size_t end = cfg_text.find('\n', start);
    if (end == std::string::npos) end = cfg_text.size();
    const std::string line = cfg_text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const size_t eq = line.find(" = ");
    check(eq != std::string::npos, "checkpoint: malformed config line '" + line + "' in " + path);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (key == "adam_p_steps") ckpt.adam_p_steps = std::stoll(value);
    else if (key == "adam_d_steps") ckpt.adam_d_steps = std::stoll(value);
    else ckpt.config.emplace_back(key, value);
  }

  const std::uint32_t n_arrays = r.u32();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    ArrayRecord a;
    const std::uint16_t name_len = r.u16();
    a.name = r.bytes(name_len, "array name");
    const std::uint32_t ndim = r.u32();
    check(ndim >= 1 && ndim <= 4, "checkpoint: array " + a.name + " has invalid rank");
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      a.dims.push_back(r.u32());
      check(a.dims.back() <= (1u << 24), "checkpoint: array " + a.name + " has an implausible dimension");
      count *= a.dims.back();  // bounded: 2^33 * 2^24 cannot overflow
      check(count <= (1ull << 33), "checkpoint: array " + a.name + " has an implausible element count");
    }
    r.need(count * 4, a.name.c_str());
    a.values.reserve(count);
    for (std::uint64_t j = 0; j < count; ++j) a.values.push_back(r.f32());
    ckpt.arrays.push_back(std::move(a));
  }
  check(r.pos == buf.size(), "checkpoint: trailing bytes in " + path);
  return ckpt;
}

namespace {

void load_array_into(const ArrayRecord& a, Tensor& t) {
  const Shape& s = t.shape();
  const std::vector<std::uint32_t> expect = {
      static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
      static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  check(a.dims == expect, "checkpoint: shape mismatch for array " + a.name);
  for (size_t i = 0; i < a.values.size(); ++i) t.data()[i] = static_cast<double>(a.values[i]);
}

std::vector<double> array_values(const ArrayRecord& a, const Tensor& like, const std::string& name) {
  const Shape& s = like.shape();
  const std::vector<std::uint32_t> expect = {
      static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
      static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  check(a.name == name, "checkpoint: expected array '" + name + "', found '" + a.name + "'");
  check(a.dims == expect, "checkpoint: shape mismatch for array " + a.name);
  std::vector<double> out;
  out.reserve(a.values.size());
  for (float v : a.values) out.push_back(static_cast<double>(v));
  return out;
}

}  // namespace

void restore(System& sys, const CheckpointData& ckpt) {
  std::vector<NamedParam>& mp = sys.model.params();
  std::vector<NamedParam>& dp = sys.disc.params();

  // Array names and shapes are checked first so a wrong-architecture load
  // names the first offending array; the key comparison below then catches
  // mismatches that do not change any shape (e.g. the residual switch).
  {
    size_t idx = 0;
    auto precheck = [&](const NamedParam& p) {
      check(idx < ckpt.arrays.size(), "checkpoint: missing array '" + p.name + "'");
      const ArrayRecord& a = ckpt.arrays[idx++];
      check(a.name == p.name, "checkpoint: expected array '" + p.name + "', found '" + a.name + "'");
      const Shape& s = p.tensor.shape();
      const std::vector<std::uint32_t> expect = {
          static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
          static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
      check(a.dims == expect, "checkpoint: shape mismatch for array " + a.name);
    };
    for (const NamedParam& p : mp) precheck(p);
    for (const NamedParam& p : dp) precheck(p);
  }

  const auto own_kv = config_to_kv(sys.cfg);
  for (const char* key : kArchKeys) {
    const std::string theirs = kv_get(ckpt.config, key);
    const std::string ours = kv_get(own_kv, key);
    check(theirs == ours, std::string("checkpoint: config mismatch for key '") + key +
                              "': checkpoint has " + theirs + ", model has " + ours);
  }
  const size_t expect_count = 2 * (mp.size() + dp.size()) + mp.size() + dp.size();
  check(ckpt.arrays.size() == expect_count,
        "checkpoint: expected " + std::to_string(expect_count) + " arrays, found " +
            std::to_string(ckpt.arrays.size()));

  size_t idx = 0;
  for (NamedParam& p : mp) {
    check(ckpt.arrays[idx].name == p.name, "checkpoint: expected array '" + p.name + "', found '" +
                                               ckpt.arrays[idx].name + "'");
    load_array_into(ckpt.arrays[idx++], p.tensor);
  }
  for (NamedParam& p : dp) {
    check(ckpt.arrays[idx].name == p.name, "checkpoint: expected array '" + p.name + "', found '" +
                                               ckpt.arrays[idx].name + "'");
    load_array_into(ckpt.arrays[idx++], p.tensor);
  }
  std::vector<std::vector<double>> pm, pv, dm, dv;
  for (const NamedParam& p : mp) {
    pm.push_back(array_values(ckpt.arrays[idx++], p.tensor, "adam_p.m." + p.name));
    pv.push_back(array_values(ckpt.arrays[idx++], p.tensor, "adam_p.v." + p.name));
  }
  for (const NamedParam& p : dp) {
    dm.push_back(array_values(ckpt.arrays[idx++], p.tensor, "adam_d.m." + p.name));
    dv.push_back(array_values(ckpt.arrays[idx++], p.tensor, "adam_d.v." + p.name));
  }
  sys.adam_p.load_state(std::move(pm), std::move(pv), ckpt.adam_p_steps);
  sys.adam_d.load_state(std::move(dm), std::move(dv), ckpt.adam_d_steps);
}

System system_from_checkpoint(const CheckpointData& ckpt) {
  RunConfig cfg;
  for (const auto& [k, v] : ckpt.config) config_set(cfg, k, v);
  System sys(cfg);
  restore(sys, ckpt);
  return sys;
}

}  // namespace strpm
