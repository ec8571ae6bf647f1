#include "casc/cifar.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

namespace casc::data {

namespace fs = std::filesystem;

uint8_t unit_to_byte(float v) {
  const float scaled = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
  return static_cast<uint8_t>(std::clamp(scaled, 0.0f, 255.0f));
}

Dataset Dataset::slice(int64_t begin, int64_t end) const {
  Dataset out;
  out.images = images.slice(0, begin, end);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

ImageBatch Dataset::batch(const torch::Tensor& indices) const {
  return ImageBatch(images.index_select(0, indices));
}

Dataset Dataset::concat(const std::vector<Dataset>& parts) {
  Dataset out;
  std::vector<torch::Tensor> tensors;
  for (const auto& p : parts) {
    if (p.size() == 0) continue;
    tensors.push_back(p.images);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  if (!tensors.empty()) out.images = torch::cat(tensors);
  return out;
}

Dataset read_cifar_batch(const fs::path& path, std::optional<int64_t> expected_records) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CIFAR batch " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto size = static_cast<int64_t>(bytes.size());
  if (size == 0 || size % kRecordBytes != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(size) +
                      " bytes is not a positive multiple of " + std::to_string(kRecordBytes));
  }
  const int64_t records = size / kRecordBytes;
  if (expected_records && records != *expected_records) {
    throw FormatError(path.string() + ": " + std::to_string(records) + " records, expected " +
                      std::to_string(*expected_records));
  }
  Dataset out;
  out.images = torch::empty({records, 3, kImageSide, kImageSide});
  out.labels.resize(static_cast<size_t>(records));
  float* dst = out.images.data_ptr<float>();
  for (int64_t r = 0; r < records; ++r) {
    const uint8_t* rec = bytes.data() + r * kRecordBytes;
    out.labels[static_cast<size_t>(r)] = rec[0];
    for (int64_t i = 0; i < kImageBytes; ++i) dst[r * kImageBytes + i] = byte_to_unit(rec[1 + i]);
  }
  return out;
}

CifarSplit ingest_cifar10(const fs::path& dir) {
  CifarSplit split;
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i) {
    train.push_back(read_cifar_batch(dir / ("data_batch_" + std::to_string(i) + ".bin")));
  }
  split.train = Dataset::concat(train);
  split.test = read_cifar_batch(dir / "test_batch.bin");
  return split;
}

int64_t verify_round_trip(const fs::path& path) {
  auto parsed = read_cifar_batch(path, std::nullopt);
  std::ifstream in(path, std::ios::binary);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), {});
  for (int64_t i = 0; i < parsed.size(); ++i) {
    const auto rec = serialize_record(parsed, i);
    if (std::memcmp(rec.data(), raw.data() + i * kRecordBytes, kRecordBytes) != 0) {
      throw FormatError(path.string() + ": record " + std::to_string(i) + " does not round-trip");
    }
  }
  return parsed.size();
}

CifarSplit load_cifar_format(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  std::vector<fs::path> train_files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("data_batch_", 0) == 0 && e.path().extension() == ".bin") {
      train_files.push_back(e.path());
    }
  }
  std::sort(train_files.begin(), train_files.end());
  CifarSplit split;
  std::vector<Dataset> train;
  for (const auto& f : train_files) train.push_back(read_cifar_batch(f, std::nullopt));
  split.train = Dataset::concat(train);
  if (fs::exists(dir / "test_batch.bin")) split.test = read_cifar_batch(dir / "test_batch.bin", std::nullopt);
  if (split.train.size() == 0) throw DataError("no data_batch_*.bin files in " + dir.string());
  return split;
}

std::array<uint8_t, kRecordBytes> serialize_record(const Dataset& dataset, int64_t index) {
  if (index < 0 || index >= dataset.size()) throw ArgumentError("serialize_record: index out of range");
  std::array<uint8_t, kRecordBytes> rec{};
  rec[0] = dataset.labels[static_cast<size_t>(index)];
  auto image = dataset.images[index].contiguous();
  const float* src = image.data_ptr<float>();
  for (int64_t i = 0; i < kImageBytes; ++i) rec[static_cast<size_t>(1 + i)] = unit_to_byte(src[i]);
  return rec;
}

void write_cifar_batch(const fs::path& path, const Dataset& dataset) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (int64_t i = 0; i < dataset.size(); ++i) {
    const auto rec = serialize_record(dataset, i);
    out.write(reinterpret_cast<const char*>(rec.data()), kRecordBytes);
  }
}

Dataset make_synthetic_dataset(int64_t count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::uniform_int_distribution<int> family_dist(0, 9);
  Dataset out;
  out.images = torch::empty({count, 3, kImageSide, kImageSide});
  out.labels.resize(static_cast<size_t>(count));
  float* dst = out.images.data_ptr<float>();
  constexpr int64_t side = kImageSide;
  for (int64_t n = 0; n < count; ++n) {
    const int family = family_dist(rng);
    out.labels[static_cast<size_t>(n)] = static_cast<uint8_t>(family);
    float bg0[3], bg1[3], fg[3];
    for (int c = 0; c < 3; ++c) {
      bg0[c] = unit(rng);
      bg1[c] = unit(rng);
      fg[c] = unit(rng);
    }
    const float angle = unit(rng) * 6.2831853f;
    const float dx = std::cos(angle), dy = std::sin(angle);
    const float cx = 8.0f + 16.0f * unit(rng), cy = 8.0f + 16.0f * unit(rng);
    const float radius = 4.0f + 8.0f * unit(rng);
    const float period = 4.0f + 6.0f * unit(rng);
    for (int64_t y = 0; y < side; ++y) {
      for (int64_t x = 0; x < side; ++x) {
        const float fx = static_cast<float>(x), fy = static_cast<float>(y);
        float s = ((fx - 15.5f) * dx + (fy - 15.5f) * dy) / 44.0f + 0.5f;
        s = std::clamp(s, 0.0f, 1.0f);
        bool inside = false;
        switch (family % 4) {
          case 0: inside = (fx - cx) * (fx - cx) + (fy - cy) * (fy - cy) < radius * radius; break;
          case 1: inside = std::abs(fx - cx) < radius && std::abs(fy - cy) < radius * 0.6f; break;
          case 2: inside = std::fmod(std::abs(fx * dy - fy * dx), period) < period * 0.5f; break;
          default: inside = std::abs(fx - cx) + std::abs(fy - cy) < radius; break;
        }
        for (int c = 0; c < 3; ++c) {
          float v = bg0[c] * (1.0f - s) + bg1[c] * s;
          if (inside) v = 0.25f * v + 0.75f * fg[c];
          const uint8_t byte = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
          dst[((n * 3 + c) * side + y) * side + x] = byte_to_unit(byte);
        }
      }
    }
  }
  return out;
}

void write_synthetic_cifar(const fs::path& dir, int64_t train_count, int64_t test_count,
                           uint64_t seed, int64_t train_batches) {
  fs::create_directories(dir);
  const int64_t per_batch = (train_count + train_batches - 1) / train_batches;
  auto train = make_synthetic_dataset(train_count, seed);
  for (int64_t b = 0; b < train_batches; ++b) {
    const int64_t begin = b * per_batch, end = std::min(train_count, begin + per_batch);
    if (begin >= end) break;
    write_cifar_batch(dir / ("data_batch_" + std::to_string(b + 1) + ".bin"), train.slice(begin, end));
  }
  write_cifar_batch(dir / "test_batch.bin", make_synthetic_dataset(test_count, seed ^ 0xC1FA5ULL));
}

}  // namespace casc::data
