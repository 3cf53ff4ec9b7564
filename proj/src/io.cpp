#include "fabr/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fabr {

namespace {

constexpr char kVolMagic[8] = {'F', 'A', 'B', 'R', 'V', 'O', 'L', '1'};
constexpr char kCkpMagic[8] = {'F', 'A', 'B', 'R', 'C', 'K', 'P', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(data), n * sizeof(float));
  } else {
    for (std::size_t i = 0; i < n; ++i) put_u32(out, std::bit_cast<std::uint32_t>(data[i]));
  }
}

// Cursor over a fully loaded file; every read reports its byte position on
// truncation so a corrupted file points at where it went bad.
struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const char* what; // "volume codec" or "checkpoint codec"

  void need(std::size_t n) {
    if (pos + n > buf.size())
      throw std::runtime_error(std::string(what) + ": truncated file at byte " +
                               std::to_string(buf.size()) + ", expected " +
                               std::to_string(pos + n));
  }
  void magic(const char m[8]) {
    need(8);
    if (std::memcmp(buf.data() + pos, m, 8) != 0)
      throw std::runtime_error(std::string(what) + ": bad magic");
    pos += 8;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  void f32(float* out, std::size_t n) {
    need(n * sizeof(float));
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out, buf.data() + pos, n * sizeof(float));
      pos += n * sizeof(float);
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(u32());
    }
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  void done() {
    if (pos != buf.size())
      throw std::runtime_error(std::string(what) + ": trailing bytes after payload at byte " +
                               std::to_string(pos));
  }
};

std::string vol_header(std::uint32_t h, std::uint32_t w, std::uint32_t d, std::uint8_t dtype) {
  std::string out(kVolMagic, 8);
  put_u32(out, 1); // version
  put_u32(out, 1); // channels
  put_u32(out, h);
  put_u32(out, w);
  put_u32(out, d);
  out.push_back(static_cast<char>(dtype));
  return out;
}

// Shared header parse; returns dims after validating magic/version/dtype.
std::array<int, 3> vol_open(Reader& r, std::uint8_t want_dtype) {
  r.magic(kVolMagic);
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw std::runtime_error("volume codec: unsupported version " + std::to_string(version));
  const std::uint32_t c = r.u32();
  if (c != 1)
    throw std::runtime_error("volume codec: expected 1 channel, file has " + std::to_string(c));
  const std::uint32_t h = r.u32(), w = r.u32(), d = r.u32();
  const std::uint8_t dtype = r.u8();
  if (dtype != want_dtype)
    throw std::runtime_error(std::string("volume codec: dtype mismatch, expected ") +
                             (want_dtype == 0 ? "f32" : "u8") + ", file has " +
                             (dtype == 0 ? "f32" : dtype == 1 ? "u8" : "unknown"));
  return {static_cast<int>(h), static_cast<int>(w), static_cast<int>(d)};
}

} // namespace

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_volume(const std::string& path, const VolumeF& vol) {
  std::string out = vol_header(static_cast<std::uint32_t>(vol.dims[0]),
                               static_cast<std::uint32_t>(vol.dims[1]),
                               static_cast<std::uint32_t>(vol.dims[2]), 0);
  put_f32(out, vol.v.data(), vol.v.size());
  write_text_file(path, out);
}

VolumeF read_volume(const std::string& path) {
  const std::string buf = read_text_file(path);
  Reader r{buf, 0, "volume codec"};
  const auto dims = vol_open(r, 0);
  VolumeF vol(dims[0], dims[1], dims[2]);
  r.f32(vol.v.data(), vol.v.size());
  r.done();
  return vol;
}

void write_mask(const std::string& path, const MaskU8& mask) {
  std::string out = vol_header(static_cast<std::uint32_t>(mask.dims[0]),
                               static_cast<std::uint32_t>(mask.dims[1]),
                               static_cast<std::uint32_t>(mask.dims[2]), 1);
  out.append(reinterpret_cast<const char*>(mask.v.data()), mask.v.size());
  write_text_file(path, out);
}

MaskU8 read_mask(const std::string& path) {
  const std::string buf = read_text_file(path);
  Reader r{buf, 0, "volume codec"};
  const auto dims = vol_open(r, 1);
  MaskU8 mask(dims[0], dims[1], dims[2]);
  r.need(mask.v.size());
  std::memcpy(mask.v.data(), buf.data() + r.pos, mask.v.size());
  r.pos += mask.v.size();
  r.done();
  return mask;
}

std::string format_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_branches(const std::string& path, const std::vector<Branch>& branches) {
  std::string out;
  for (const Branch& b : branches)
    for (const Coord& c : b.centerline) {
      out += std::to_string(b.id) + ' ' + std::to_string(b.parent_id) + ' ' +
             std::to_string(c[0]) + ' ' + std::to_string(c[1]) + ' ' + std::to_string(c[2]) +
             ' ' + format_float(b.radius) + '\n';
    }
  write_text_file(path, out);
}

std::vector<Branch> read_branches(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<Branch> branches;
  std::map<int, std::size_t> index; // branch id -> slot
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int id, parent_id, x, y, z;
    float radius;
    if (!(ls >> id >> parent_id >> x >> y >> z >> radius))
      throw std::runtime_error("branch file: malformed line " + std::to_string(line_no) + ": " +
                               line);
    auto it = index.find(id);
    if (it == index.end()) {
      Branch b;
      b.id = id;
      b.parent_id = parent_id;
      b.radius = radius;
      index.emplace(id, branches.size());
      branches.push_back(std::move(b));
      it = index.find(id);
    } else {
      const Branch& b = branches[it->second];
      if (b.parent_id != parent_id || b.radius != radius)
        throw std::runtime_error("branch file: inconsistent branch " + std::to_string(id) +
                                 " at line " + std::to_string(line_no));
    }
    branches[it->second].centerline.push_back({x, y, z});
  }
  for (Branch& b : branches) {
    if (b.parent_id < 0) {
      b.generation = 0;
      continue;
    }
    auto it = index.find(b.parent_id);
    if (it == index.end())
      throw std::runtime_error("branch file: branch " + std::to_string(b.id) +
                               " references missing parent " + std::to_string(b.parent_id));
    b.generation = branches[it->second].generation + 1;
  }
  return branches;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out(kCkpMagic, 8);
  put_u32(out, ck.version);
  put_u64(out, ck.config_hash);
  put_u64(out, ck.step);
  put_u32(out, ck.epoch);
  put_u32(out, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const NamedArray& a : ck.arrays) {
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    std::size_t numel = 1;
    for (int d : a.shape) {
      put_u32(out, static_cast<std::uint32_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    if (numel != a.values.size())
      throw std::runtime_error("checkpoint codec: array '" + a.name +
                               "' shape does not match value count");
    put_f32(out, a.values.data(), a.values.size());
  }
  write_text_file(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
  const std::string buf = read_text_file(path);
  Reader r{buf, 0, "checkpoint codec"};
  r.magic(kCkpMagic);
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1)
    throw std::runtime_error("checkpoint codec: unsupported version " +
                             std::to_string(ck.version));
  ck.config_hash = r.u64();
  ck.step = r.u64();
  ck.epoch = r.u32();
  const std::uint32_t count = r.u32();
  ck.arrays.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray& a = ck.arrays[i];
    a.name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    a.shape.resize(rank);
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      a.shape[k] = static_cast<int>(r.u32());
      numel *= static_cast<std::size_t>(a.shape[k]);
    }
    a.values.resize(numel);
    r.f32(a.values.data(), numel);
  }
  r.done();
  return ck;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

} // namespace fabr
