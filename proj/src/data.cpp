#include "fovea/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fovea/error.hpp"
#include "fovea/random.hpp"

namespace fovea {

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write failed for '" + path.string() + "'");
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (offset + 4 > bytes.size()) throw ParseError(std::string("truncated IDX header: missing ") + what, bytes.size());
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

IdxArray parse_idx(std::span<const std::uint8_t> bytes) {
  IdxArray a;
  a.magic = read_be32(bytes, 0, "magic");
  // 0x00 0x00 <type=0x08 unsigned byte> <rank>
  if ((a.magic >> 16) != 0 || ((a.magic >> 8) & 0xff) != 0x08) {
    std::ostringstream os;
    os << "bad IDX magic 0x" << std::hex << a.magic;
    throw ParseError(os.str(), 0);
  }
  const std::uint32_t rank = a.magic & 0xff;
  if (rank == 0) throw ParseError("IDX rank must be positive", 3);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    a.dims.push_back(read_be32(bytes, 4 + 4 * i, "dimension size"));
    count *= a.dims.back();
  }
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header + count) {
    throw ParseError("truncated IDX payload: expected " + std::to_string(count) + " bytes, found " +
                         std::to_string(bytes.size() - header),
                     bytes.size());
  }
  if (bytes.size() > header + count) {
    throw ParseError("trailing bytes after IDX payload", header + count);
  }
  a.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return a;
}

}  // namespace

void LabeledDataset::validate() const {
  if (images.size() != labels.size()) throw ValidationError("dataset: image/label count mismatch");
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ValidationError("dataset: label " + std::to_string(l) + " outside [0, classes)");
  }
  for (const auto& im : images) validate_image(im);
}

IdxArray read_idx(const fs::path& path) { return parse_idx(read_file(path)); }

void write_idx(const IdxArray& array, const fs::path& path) {
  std::vector<std::uint8_t> out;
  append_be32(out, array.magic);
  for (auto d : array.dims) append_be32(out, d);
  out.insert(out.end(), array.values.begin(), array.values.end());
  write_file(path, out);
}

LabeledDataset load_idx(const fs::path& images_path, const fs::path& labels_path, int classes) {
  IdxArray im = read_idx(images_path);
  if (im.magic != 0x00000803) {
    std::ostringstream os;
    os << "expected image magic 0x00000803, got 0x" << std::hex << im.magic;
    throw ParseError(os.str(), 0);
  }
  IdxArray lb = read_idx(labels_path);
  if (lb.magic != 0x00000801) {
    std::ostringstream os;
    os << "expected label magic 0x00000801, got 0x" << std::hex << lb.magic;
    throw ParseError(os.str(), 0);
  }
  if (lb.dims[0] != im.dims[0]) {
    throw ValidationError("label count " + std::to_string(lb.dims[0]) + " does not match image count " +
                          std::to_string(im.dims[0]));
  }
  const int rows = static_cast<int>(im.dims[1]), cols = static_cast<int>(im.dims[2]);
  LabeledDataset ds;
  ds.classes = classes;
  ds.images.reserve(im.dims[0]);
  const std::size_t stride = static_cast<std::size_t>(rows) * cols;
  for (std::size_t n = 0; n < im.dims[0]; ++n) {
    std::vector<float> px(stride * 3);
    for (std::size_t i = 0; i < stride; ++i) {
      const float v = static_cast<float>(im.values[n * stride + i]) / 255.0f;
      px[3 * i] = px[3 * i + 1] = px[3 * i + 2] = v;
    }
    ds.images.emplace_back(rows, cols, std::move(px));
    ds.labels.push_back(lb.values[n]);
  }
  for (int l : ds.labels) {
    if (l >= classes) throw ValidationError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
  }
  return ds;
}

void save_idx(const LabeledDataset& dataset, const fs::path& images_path, const fs::path& labels_path) {
  if (dataset.images.empty()) throw ValidationError("save_idx: empty dataset");
  const int rows = dataset.images[0].height(), cols = dataset.images[0].width();
  IdxArray im{0x00000803, {static_cast<std::uint32_t>(dataset.size()), static_cast<std::uint32_t>(rows),
                           static_cast<std::uint32_t>(cols)}, {}};
  im.values.reserve(dataset.size() * rows * cols);
  for (const auto& img : dataset.images) {
    if (img.height() != rows || img.width() != cols) throw ValidationError("save_idx: images differ in size");
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x)
        im.values.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(img.at(y, x, 0), 0.0f, 1.0f) * 255.0f)));
  }
  IdxArray lb{0x00000801, {static_cast<std::uint32_t>(dataset.size())}, {}};
  for (int l : dataset.labels) lb.values.push_back(static_cast<std::uint8_t>(l));
  write_idx(im, images_path);
  write_idx(lb, labels_path);
}

// ---------------------------------------------------------------------------
// PPM

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw ParseError(std::string("PPM: expected ") + what, pos);
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1 << 24) throw ParseError(std::string("PPM: ") + what + " too large", pos);
    }
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw ParseError("PPM: missing magic", 0);
  if (bytes[1] != '6') {
    throw UnsupportedFormatError(std::string("PPM: only binary P6 is supported, got P") + static_cast<char>(bytes[1]));
  }
  pos = 2;
  const int width = read_int("width");
  const int height = read_int("height");
  const int maxval = read_int("maxval");
  if (maxval != 255) throw UnsupportedFormatError("PPM: only maxval 255 is supported, got " + std::to_string(maxval));
  if (width < 1 || height < 1) throw ParseError("PPM: dimensions must be positive", pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw ParseError("PPM: missing whitespace after header", pos);
  ++pos;
  const std::size_t n = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - pos < n) throw ParseError("PPM: truncated pixel data", bytes.size());
  std::vector<float> px(n);
  for (std::size_t i = 0; i < n; ++i) px[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
  return Image(height, width, std::move(px));
}

Image load_ppm(const fs::path& path) { return decode_ppm(read_file(path)); }

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  std::string header = "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels().size());
  for (float v : image.pixels()) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  return out;
}

void write_ppm(const Image& image, const fs::path& path) { write_file(path, encode_ppm(image)); }

LabeledDataset load_manifest(const fs::path& path, int classes) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest '" + path.string() + "'");
  LabeledDataset ds;
  ds.classes = classes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string file;
    int label = -1;
    if (!(ls >> file)) continue;
    if (!(ls >> label)) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": missing label");
    fs::path p(file);
    if (p.is_relative()) p = path.parent_path() / p;
    ds.images.push_back(load_ppm(p));
    ds.labels.push_back(label);
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Cluttered digits

namespace {

void blit_max(Image& canvas, const Image& src, int sy, int sx, int h, int w, int dy, int dx) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float& d = canvas.at(dy + y, dx + x, c);
        d = std::max(d, src.at(sy + y, sx + x, c));
      }
}

bool overlaps(int ay, int ax, int ah, int aw, int by, int bx, int bh, int bw) {
  return ay < by + bh && by < ay + ah && ax < bx + bw && bx < ax + aw;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace

LabeledImage synth_cluttered(std::mt19937_64& rng, const LabeledDataset& source, const ClutterOptions& options) {
  if (source.size() == 0) throw ValidationError("synth_cluttered: empty source dataset");
  return synth_cluttered(rng, source, static_cast<std::size_t>(rng() % source.size()), options);
}

LabeledImage synth_cluttered(std::mt19937_64& rng, const LabeledDataset& source, std::size_t digit_index,
                             const ClutterOptions& options) {
  const Image& digit = source.images.at(digit_index);
  const int canvas = options.canvas;
  if (canvas < digit.height() || canvas < digit.width()) {
    throw ValidationError("synth_cluttered: canvas " + std::to_string(canvas) + " smaller than source image");
  }
  Image out(canvas, canvas);
  int dy, dx;
  if (options.position) {
    dy = options.position->first;
    dx = options.position->second;
    if (dy < 0 || dx < 0 || dy + digit.height() > canvas || dx + digit.width() > canvas) {
      throw ValidationError("synth_cluttered: digit position outside canvas");
    }
  } else {
    dy = uniform_int(rng, 0, canvas - digit.height());
    dx = uniform_int(rng, 0, canvas - digit.width());
  }
  const int ds = options.distractor_size;
  for (int k = 0; k < options.distractors && source.size() > 1; ++k) {
    std::size_t other = static_cast<std::size_t>(rng() % (source.size() - 1));
    if (other >= digit_index) ++other;
    const Image& od = source.images[other];
    const int cs = std::min({ds, od.height(), od.width(), canvas});
    const int sy = uniform_int(rng, 0, od.height() - cs);
    const int sx = uniform_int(rng, 0, od.width() - cs);
    for (int attempt = 0; attempt < 32; ++attempt) {
      const int py = uniform_int(rng, 0, canvas - cs);
      const int px = uniform_int(rng, 0, canvas - cs);
      if (!overlaps(py, px, cs, cs, dy, dx, digit.height(), digit.width())) {
        blit_max(out, od, sy, sx, cs, cs, py, px);
        break;
      }
    }
  }
  blit_max(out, digit, 0, 0, digit.height(), digit.width(), dy, dx);
  return {std::move(out), source.labels.at(digit_index)};
}

// ---------------------------------------------------------------------------
// MixUp

std::vector<std::vector<double>> one_hot(std::span<const int> labels, int classes) {
  std::vector<std::vector<double>> out;
  out.reserve(labels.size());
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ValidationError("one_hot: label outside [0, classes)");
    std::vector<double> row(static_cast<std::size_t>(classes), 0.0);
    row[static_cast<std::size_t>(l)] = 1.0;
    out.push_back(std::move(row));
  }
  return out;
}

MixupBatch mixup_with(std::span<const Image> images, std::span<const std::vector<double>> targets, double lambda,
                      std::span<const std::size_t> partner) {
  if (images.size() != targets.size() || images.size() != partner.size()) {
    throw ValidationError("mixup: batch length mismatch");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("mixup: lambda outside [0,1]");
  MixupBatch out;
  out.lambda = lambda;
  out.partner.assign(partner.begin(), partner.end());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& a = images[i];
    Image b = images[partner[i]];
    if (b.height() != a.height() || b.width() != a.width()) b = resize_bilinear(b, a.height(), a.width());
    Image m(a.height(), a.width());
    auto dst = m.pixels();
    auto pa = a.pixels();
    auto pb = b.pixels();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      dst[j] = static_cast<float>(std::clamp(lambda * pa[j] + (1.0 - lambda) * pb[j], 0.0, 1.0));
    }
    out.images.push_back(std::move(m));
    std::vector<double> t(targets[i].size());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = lambda * targets[i][k] + (1.0 - lambda) * targets[partner[i]][k];
    out.targets.push_back(std::move(t));
  }
  return out;
}

MixupBatch mixup(std::span<const Image> images, std::span<const std::vector<double>> targets, double alpha,
                 std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw ValidationError("mixup: alpha must be > 0");
  if (images.size() < 2) throw ValidationError("mixup: batch must hold at least two images");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng), y = gamma(rng);
  const double lambda = (x + y) > 0.0 ? x / (x + y) : 0.5;
  const auto perm = permutation(images.size(), rng);
  return mixup_with(images, targets, lambda, perm);
}

// ---------------------------------------------------------------------------
// Sources

DatasetSource::DatasetSource(std::shared_ptr<const LabeledDataset> dataset, std::vector<std::size_t> indices,
                             int resize_to)
    : dataset_(std::move(dataset)), indices_(std::move(indices)), resize_to_(resize_to) {
  for (auto i : indices_) {
    if (i >= dataset_->size()) throw ValidationError("DatasetSource: index out of range");
  }
}

LabeledImage DatasetSource::get(std::size_t index, std::uint64_t) const {
  const std::size_t i = indices_.at(index);
  const Image& im = dataset_->images[i];
  if (resize_to_ > 0) return {resize_bilinear(im, resize_to_, resize_to_), dataset_->labels[i]};
  return {im, dataset_->labels[i]};
}

ClutteredSource::ClutteredSource(std::shared_ptr<const LabeledDataset> digits, std::vector<std::size_t> indices,
                                 ClutterOptions options, std::uint64_t seed, bool vary_by_epoch)
    : digits_(std::move(digits)),
      indices_(std::move(indices)),
      options_(std::move(options)),
      seed_(seed),
      vary_by_epoch_(vary_by_epoch) {
  for (auto i : indices_) {
    if (i >= digits_->size()) throw ValidationError("ClutteredSource: index out of range");
  }
}

LabeledImage ClutteredSource::get(std::size_t index, std::uint64_t epoch) const {
  auto rng = make_rng({seed_, 0xc177e4ULL, indices_.at(index), vary_by_epoch_ ? epoch : 0});
  return synth_cluttered(rng, *digits_, indices_[index], options_);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, std::size_t val_count,
                                                                            std::uint64_t seed) {
  if (val_count > n) throw ValidationError("split_indices: validation count exceeds dataset size");
  auto rng = make_rng({seed, 0x5b117ULL});
  auto perm = permutation(n, rng);
  std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(val_count));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(val_count), perm.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(val)};
}

}  // namespace fovea
