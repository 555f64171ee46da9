// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/harness/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>

namespace ssmtune {

namespace {

constexpr std::size_t kMagicSize = sizeof(kCheckpointMagic) - 1;

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Cursor {
 public:
  explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > bytes_.size() - pos_) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string checkpoint_bytes(const ParamMap& params) {
  std::string out(kCheckpointMagic, kMagicSize);
  put<std::uint64_t>(out, params.size());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    if (name.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw CheckpointError("parameter name too long: " + name.substr(0, 64));
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
    put<std::uint64_t>(out, offset);
    offset += 8 * t.size();
  }
  for (const auto& [name, t] : params) {
    for (double v : t.data()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParamMap checkpoint_parse(const std::string& bytes) {
  Cursor c(bytes);
  if (c.take(kMagicSize, "magic") != std::string(kCheckpointMagic, kMagicSize)) {
    throw CheckpointError("not a checkpoint: bad magic");
  }
  const auto count = c.get<std::uint64_t>("entry count");
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  std::uint64_t expected = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.name = c.take(c.get<std::uint32_t>("name length"), "name");
    const auto rank = c.get<std::uint32_t>("rank");
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(c.get<std::uint64_t>("extent"));
    e.offset = c.get<std::uint64_t>("offset");
    if (e.offset != expected) {
      throw CheckpointError("checkpoint entry '" + e.name + "' has offset " + std::to_string(e.offset) +
                            ", expected " + std::to_string(expected) + " from the preceding shapes");
    }
    expected += 8 * shape_numel(e.shape);
    entries.push_back(std::move(e));
  }
  const std::size_t payload = c.pos();
  if (bytes.size() - payload != expected) {
    throw CheckpointError("checkpoint payload holds " + std::to_string(bytes.size() - payload) +
                          " bytes; the header describes " + std::to_string(expected));
  }
  ParamMap out;
  for (const Entry& e : entries) {
    Tensor t(e.shape);
    const char* p = bytes.data() + payload + e.offset;
    for (std::size_t k = 0; k < t.size(); ++k) {
      std::uint64_t bits = 0;
      for (std::size_t b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[8 * k + b])) << (8 * b);
      }
      t[k] = std::bit_cast<double>(bits);
    }
    if (!out.emplace(e.name, std::move(t)).second) {
      throw CheckpointError("checkpoint repeats entry '" + e.name + "'");
    }
  }
  return out;
}

void checkpoint_save(const ParamMap& params, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw CheckpointError("write failed for " + path.string());
}

ParamMap checkpoint_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  try {
    return checkpoint_parse(bytes.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void checkpoint_load(ParamMap& params, const std::filesystem::path& path) {
  ParamMap loaded = checkpoint_read(path);
  // Both maps iterate in name order, so the first divergence is the first mismatch.
  auto a = params.begin();
  auto b = loaded.begin();
  for (; a != params.end() && b != loaded.end(); ++a, ++b) {
    if (a->first != b->first) {
      const bool missing = a->first < b->first;
      throw CheckpointError(path.string() + ": " +
                            (missing ? "model parameter '" + a->first + "' is missing from the checkpoint"
                                     : "checkpoint entry '" + b->first + "' has no model parameter"));
    }
    if (a->second.shape() != b->second.shape()) {
      throw CheckpointError(path.string() + ": parameter '" + a->first + "' has shape " +
                            shape_str(a->second.shape()) + " but the checkpoint holds " +
                            shape_str(b->second.shape()));
    }
  }
  if (a != params.end()) {
    throw CheckpointError(path.string() + ": model parameter '" + a->first + "' is missing from the checkpoint");
  }
  if (b != loaded.end()) {
    throw CheckpointError(path.string() + ": checkpoint entry '" + b->first + "' has no model parameter");
  }
  params = std::move(loaded);
}

}  // namespace ssmtune
