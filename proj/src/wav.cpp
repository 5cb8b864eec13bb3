#include "batvision/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace bv {

namespace {

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::vector<char>& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
void put_tag(std::vector<char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}
std::uint16_t get_u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                    (static_cast<unsigned char>(p[1]) << 8));
}

}  // namespace

void write_wav(const std::filesystem::path& path, const BinauralRecording& rec,
               const std::string& comment) {
  if (rec.left.size() != rec.right.size()) throw std::invalid_argument("wav: channel lengths differ");
  const auto frames = static_cast<std::uint32_t>(rec.left.size());
  const auto rate = static_cast<std::uint32_t>(std::lround(rec.sample_rate));

  std::vector<char> out;
  put_tag(out, "RIFF");
  put_u32(out, 0);  // patched below
  put_tag(out, "WAVE");

  put_tag(out, "fmt ");
  put_u32(out, 18);
  put_u16(out, 3);  // IEEE float
  put_u16(out, 2);
  put_u32(out, rate);
  put_u32(out, rate * 8);
  put_u16(out, 8);
  put_u16(out, 32);
  put_u16(out, 0);

  put_tag(out, "fact");
  put_u32(out, 4);
  put_u32(out, frames);

  if (!comment.empty()) {
    std::string text = comment;
    text.push_back('\0');
    if (text.size() % 2) text.push_back('\0');
    put_tag(out, "LIST");
    put_u32(out, static_cast<std::uint32_t>(4 + 8 + text.size()));
    put_tag(out, "INFO");
    put_tag(out, "ICMT");
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
  }

  put_tag(out, "data");
  put_u32(out, frames * 8);
  for (std::uint32_t i = 0; i < frames; ++i) {
    for (double v : {rec.left[i], rec.right[i]}) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  const auto riff_size = static_cast<std::uint32_t>(out.size() - 8);
  std::memcpy(out.data() + 4, &riff_size, 4);

  std::ofstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("write failed: " + path.string());
}

BinauralRecording read_wav(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) {
    return std::runtime_error("malformed WAV " + path.string() + ": " + why);
  };
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) || std::memcmp(buf.data() + 8, "WAVE", 4)) {
    throw fail("missing RIFF/WAVE header");
  }
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::uint32_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* tag = buf.data() + pos;
    const std::uint32_t size = get_u32(tag + 4);
    if (pos + 8 + size > buf.size()) throw fail("truncated chunk");
    if (!std::memcmp(tag, "fmt ", 4)) {
      if (size < 16) throw fail("short fmt chunk");
      format = get_u16(tag + 8);
      channels = get_u16(tag + 10);
      rate = get_u32(tag + 12);
      bits = get_u16(tag + 22);
      have_fmt = true;
    } else if (!std::memcmp(tag, "data", 4)) {
      data = tag + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  if (!have_fmt || !data) throw fail("missing fmt or data chunk");
  if (format != 3 || channels != 2 || bits != 32) {
    throw fail("expected 2-channel 32-bit float samples");
  }
  if (data_size % 8) throw fail("data size not a whole number of frames");

  BinauralRecording rec;
  rec.sample_rate = rate;
  const std::size_t frames = data_size / 8;
  rec.left.resize(frames);
  rec.right.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    float l, r;
    std::uint32_t lb = get_u32(data + 8 * i), rb = get_u32(data + 8 * i + 4);
    std::memcpy(&l, &lb, 4);
    std::memcpy(&r, &rb, 4);
    if (!std::isfinite(l) || !std::isfinite(r)) throw fail("non-finite sample");
    rec.left[i] = l;
    rec.right[i] = r;
  }
  return rec;
}

std::string read_wav_comment(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw std::runtime_error("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4)) {
    throw std::runtime_error("malformed WAV " + path.string() + ": missing RIFF/WAVE header");
  }
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const char* tag = buf.data() + pos;
    const std::uint32_t size = get_u32(tag + 4);
    if (pos + 8 + size > buf.size()) break;
    if (!std::memcmp(tag, "LIST", 4) && size >= 12 && !std::memcmp(tag + 8, "INFO", 4)) {
      std::size_t sub = 12;
      while (sub + 8 <= 8 + size) {
        const char* st = tag + sub;
        const std::uint32_t ssize = get_u32(st + 4);
        if (sub + 8 + ssize > 8 + size) break;
        if (!std::memcmp(st, "ICMT", 4)) return std::string(st + 8, strnlen(st + 8, ssize));
        sub += 8 + ssize + (ssize & 1);
      }
    }
    pos += 8 + size + (size & 1);
  }
  return {};
}

}  // namespace bv
