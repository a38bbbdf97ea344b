#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "flowmix/data.hpp"

namespace flowmix {

namespace {

constexpr std::size_t kFloHeaderBytes = 12;
constexpr std::int32_t kFloMaxSide = 1 << 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((value >> (8 * i)) & 0xff));
  }
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t offset) {
  std::uint32_t value = 0;
  for (int i = 0; i < 4; ++i) {
    value |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  }
  return value;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error("short write to " + path.string());
  }
}

// Classic-API PNG writer with tEXt chunks. Only trivially destructible locals live
// in this frame because libpng reports errors through longjmp.
bool write_png8_with_text(const char* path, int width, int height, png_bytep* rows, png_textp texts, int text_count) {
  FILE* fp = std::fopen(path, "wb");
  if (fp == nullptr) {
    return false;
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (text_count > 0) {
    png_set_text(png, info, texts, text_count);
  }
  png_write_info(png, info);
  png_write_image(png, rows);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  return true;
}

using TextSink = void (*)(void* user, const char* key, const char* value);

bool read_png_text_chunks(const char* path, TextSink sink, void* user) {
  FILE* fp = std::fopen(path, "rb");
  if (fp == nullptr) {
    return false;
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_textp texts = nullptr;
  int count = 0;
  png_get_text(png, info, &texts, &count);
  for (int i = 0; i < count; ++i) {
    sink(user, texts[i].key, texts[i].text);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_flo(const FlowField& field, const ValidMask* valid) {
  if (valid != nullptr) {
    require_same_shape(field, *valid, "write_flo");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kFloHeaderBytes + field.pixel_count() * 8);
  put_u32(out, std::bit_cast<std::uint32_t>(kFloMagic));
  put_u32(out, static_cast<std::uint32_t>(field.width()));
  put_u32(out, static_cast<std::uint32_t>(field.height()));
  const std::uint32_t unknown = std::bit_cast<std::uint32_t>(1e10f);
  for (int r = 0; r < field.height(); ++r) {
    for (int c = 0; c < field.width(); ++c) {
      const bool ok = valid == nullptr || valid->get(r, c);
      put_u32(out, ok ? std::bit_cast<std::uint32_t>(field.u(r, c)) : unknown);
      put_u32(out, ok ? std::bit_cast<std::uint32_t>(field.v(r, c)) : unknown);
    }
  }
  return out;
}

FlowWithMask decode_flo(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kFloHeaderBytes) {
    throw ParseError(".flo: truncated header at offset " + std::to_string(bytes.size()) + " (need 12 bytes)");
  }
  if (std::memcmp(bytes.data(), "PIEH", 4) != 0) {
    throw ParseError(".flo: bad magic at offset 0 (expected \"PIEH\")");
  }
  const auto width = static_cast<std::int32_t>(get_u32(bytes, 4));
  const auto height = static_cast<std::int32_t>(get_u32(bytes, 8));
  if (width <= 0 || width > kFloMaxSide) {
    throw ParseError(".flo: invalid width " + std::to_string(width) + " at offset 4");
  }
  if (height <= 0 || height > kFloMaxSide) {
    throw ParseError(".flo: invalid height " + std::to_string(height) + " at offset 8");
  }
  const std::size_t expected = kFloHeaderBytes + static_cast<std::size_t>(width) * height * 8;
  if (bytes.size() < expected) {
    throw ParseError(".flo: truncated payload at offset " + std::to_string(bytes.size()) + ", expected " +
                     std::to_string(expected) + " bytes");
  }
  if (bytes.size() > expected) {
    throw ParseError(".flo: trailing bytes after offset " + std::to_string(expected));
  }
  FlowWithMask out{FlowField(height, width), ValidMask(height, width, true)};
  std::size_t offset = kFloHeaderBytes;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const float u = std::bit_cast<float>(get_u32(bytes, offset));
      const float v = std::bit_cast<float>(get_u32(bytes, offset + 4));
      offset += 8;
      if (!(std::abs(u) < kFloUnknownThreshold) || !(std::abs(v) < kFloUnknownThreshold)) {
        out.valid.set(r, c, false);
        continue;
      }
      out.flow.u(r, c) = u;
      out.flow.v(r, c) = v;
    }
  }
  return out;
}

FlowWithMask read_flo(const std::filesystem::path& path) { return decode_flo(read_file(path)); }

void write_flo(const FlowField& field, const std::filesystem::path& path) { write_file(encode_flo(field), path); }

void write_flo(const FlowField& field, const ValidMask& valid, const std::filesystem::path& path) {
  write_file(encode_flo(field, &valid), path);
}

Png16 read_png16(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    throw ParseError("png: cannot read " + path.string() + ": " + image.message);
  }
  const bool linear = (image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  if (!linear || !color || alpha) {
    png_image_free(&image);
    throw ParseError("png: " + path.string() + " is not a 16-bit 3-channel image");
  }
  image.format = PNG_FORMAT_LINEAR_RGB;
  Png16 out{static_cast<int>(image.height), static_cast<int>(image.width), {}};
  out.rgb.resize(static_cast<std::size_t>(image.height) * image.width * 3);
  if (png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr) == 0) {
    throw ParseError("png: decode failed for " + path.string() + ": " + image.message);
  }
  return out;
}

void write_png16(const Png16& png, const std::filesystem::path& path) {
  if (png.rgb.size() != static_cast<std::size_t>(png.height) * png.width * 3) {
    throw ContractViolation("write_png16: payload size mismatch");
  }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(png.width);
  image.height = static_cast<png_uint_32>(png.height);
  image.format = PNG_FORMAT_LINEAR_RGB;
  if (png_image_write_to_file(&image, path.c_str(), 0, png.rgb.data(), 0, nullptr) == 0) {
    throw std::runtime_error("png: cannot write " + path.string() + ": " + image.message);
  }
}

FlowWithMask read_kitti_png(const std::filesystem::path& path) {
  const auto png = read_png16(path);
  FlowWithMask out{FlowField(png.height, png.width), ValidMask(png.height, png.width, false)};
  for (int r = 0; r < png.height; ++r) {
    for (int c = 0; c < png.width; ++c) {
      const std::size_t i = (static_cast<std::size_t>(r) * png.width + c) * 3;
      if (png.rgb[i + 2] == 0) {
        continue;
      }
      out.flow.u(r, c) = (static_cast<float>(png.rgb[i]) - 32768.0f) / 64.0f;
      out.flow.v(r, c) = (static_cast<float>(png.rgb[i + 1]) - 32768.0f) / 64.0f;
      out.valid.set(r, c, true);
    }
  }
  return out;
}

void write_kitti_png(const FlowField& field, const ValidMask& valid, const std::filesystem::path& path) {
  require_same_shape(field, valid, "write_kitti_png");
  Png16 png{field.height(), field.width(), std::vector<std::uint16_t>(field.pixel_count() * 3, 0)};
  auto encode = [](float x) {
    const double q = std::round(static_cast<double>(x) * 64.0 + 32768.0);
    return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
  };
  for (int r = 0; r < field.height(); ++r) {
    for (int c = 0; c < field.width(); ++c) {
      if (!valid.get(r, c)) {
        continue;
      }
      const std::size_t i = (static_cast<std::size_t>(r) * field.width() + c) * 3;
      png.rgb[i] = encode(field.u(r, c));
      png.rgb[i + 1] = encode(field.v(r, c));
      png.rgb[i + 2] = 1;
    }
  }
  write_png16(png, path);
}

Image read_png_image(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    throw ParseError("png: cannot read " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr) == 0) {
    throw ParseError("png: decode failed for " + path.string() + ": " + image.message);
  }
  std::vector<float> values(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    values[i] = static_cast<float>(rgb[i]) / 255.0f;
  }
  return Image(static_cast<int>(image.height), static_cast<int>(image.width), std::move(values));
}

void write_png_image(const Image& image, const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, std::string>>& text) {
  const int h = image.height();
  const int w = image.width();
  std::vector<png_byte> rgb(static_cast<std::size_t>(h) * w * 3);
  auto values = image.values();
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    rgb[i] = static_cast<png_byte>(std::lround(std::clamp(values[i], 0.0f, 1.0f) * 255.0f));
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int r = 0; r < h; ++r) {
    rows[r] = rgb.data() + static_cast<std::size_t>(r) * w * 3;
  }
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }
  if (!write_png8_with_text(path.c_str(), w, h, rows.data(), chunks.data(), static_cast<int>(chunks.size()))) {
    throw std::runtime_error("png: cannot write " + path.string());
  }
}

std::vector<std::pair<std::string, std::string>> read_png_text(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  auto sink = [](void* user, const char* key, const char* value) {
    static_cast<std::vector<std::pair<std::string, std::string>>*>(user)->emplace_back(key, value);
  };
  if (!read_png_text_chunks(path.c_str(), sink, &out)) {
    throw ParseError("png: cannot read text chunks of " + path.string());
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ParseError("manifest: cannot open " + path.string());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    std::istringstream fields(line);
    std::string id, f1, f2, flow, extra;
    if (!(fields >> id >> f1 >> f2 >> flow) || (fields >> extra)) {
      throw ParseError("manifest " + path.string() + ":" + std::to_string(line_no) +
                       ": expected `<id> <frame1> <frame2> <flow>`");
    }
    entries.push_back({id, resolve(f1), resolve(f2), resolve(flow)});
  }
  return entries;
}

void write_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "# id frame1 frame2 flow\n";
  for (const auto& e : entries) {
    out << e.id << ' ' << e.frame1.string() << ' ' << e.frame2.string() << ' ' << e.flow.string() << '\n';
  }
}

std::vector<LabeledSample> load_dataset(const std::filesystem::path& manifest, FlowFormat format) {
  std::vector<LabeledSample> samples;
  for (const auto& e : read_manifest(manifest)) {
    auto flow = format == FlowFormat::kFlo ? read_flo(e.flow) : read_kitti_png(e.flow);
    auto f1 = read_png_image(e.frame1);
    auto f2 = read_png_image(e.frame2);
    if (!f1.same_shape(f2) || !f1.same_shape(flow.flow)) {
      throw ParseError("manifest entry " + e.id + ": frame and flow shapes differ");
    }
    samples.push_back({std::move(f1), std::move(f2), std::move(flow.flow), std::move(flow.valid), e.id});
  }
  return samples;
}

std::filesystem::path save_dataset(const std::vector<LabeledSample>& samples, const std::filesystem::path& dir,
                                   FlowFormat format) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& s : samples) {
    ManifestEntry e{s.id, s.id + "_1.png", s.id + "_2.png",
                    s.id + (format == FlowFormat::kFlo ? "_flow.flo" : "_flow.png")};
    write_png_image(s.frame1, dir / e.frame1);
    write_png_image(s.frame2, dir / e.frame2);
    if (format == FlowFormat::kFlo) {
      write_flo(s.gt_flow, s.valid, dir / e.flow);
    } else {
      write_kitti_png(s.gt_flow, s.valid, dir / e.flow);
    }
    entries.push_back(std::move(e));
  }
  const auto manifest = dir / "manifest.txt";
  write_manifest(entries, manifest);
  return manifest;
}

}  // namespace flowmix
