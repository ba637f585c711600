#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "dil/common.hpp"
#include "dil/digest.hpp"
#include "dil/model.hpp"

namespace dil {

// Binary model persistence. One file holds the architecture, the global
// vocabulary, every bank's metadata, and every named tensor as 32-bit
// little-endian floats with a per-tensor digest. Loading verifies each
// digest and rebuilds the model structurally, so save -> load -> save is
// byte-identical (double models are stored at 32-bit precision).

namespace ckpt {

constexpr char kMagic[4] = {'D', 'I', 'L', 'C'};
constexpr uint8_t kVersion = 1;

inline void put_u8(std::string& out, uint8_t v) {
  out.push_back(static_cast<char>(v));
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

inline void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

// Cursor over the loaded file; every read is bounds-checked.
struct Reader {
  const unsigned char* p = nullptr;
  size_t n = 0;
  size_t off = 0;

  void need(size_t bytes) const {
    if (off + bytes > n) throw CheckpointError("checkpoint: truncated file");
  }
  uint8_t u8() {
    need(1);
    return p[off++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(p[off + static_cast<size_t>(i)]) << (8 * i);
    }
    off += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<uint64_t>(p[off + static_cast<size_t>(i)]) << (8 * i);
    }
    off += 8;
    return v;
  }
  std::string str() {
    const uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p + off), len);
    off += len;
    return s;
  }
};

}  // namespace ckpt

template <typename T>
std::string serialize_checkpoint(DilModel<T>& model) {
  using namespace ckpt;
  std::string blob;
  blob.append(kMagic, 4);
  put_u8(blob, kVersion);

  const auto& arch = model.arch;
  put_u32(blob, static_cast<uint32_t>(arch.n_blocks));
  put_u32(blob, static_cast<uint32_t>(arch.convs_per_block));
  put_u32(blob, static_cast<uint32_t>(arch.f));
  put_u32(blob, static_cast<uint32_t>(arch.t));
  for (int c : arch.channels) put_u32(blob, static_cast<uint32_t>(c));

  put_u32(blob, static_cast<uint32_t>(model.vocabulary.size()));
  for (const auto& name : model.vocabulary) put_string(blob, name);

  put_u32(blob, static_cast<uint32_t>(model.banks.size()));
  for (const auto& bank : model.banks) {
    put_u32(blob, static_cast<uint32_t>(bank.spec.domain_id));
    put_string(blob, bank.spec.name);
    put_u32(blob, static_cast<uint32_t>(bank.spec.class_list.size()));
    for (const auto& cls : bank.spec.class_list) put_string(blob, cls);
    put_u8(blob, bank.spec.task == TaskKind::kSingleLabel ? 0 : 1);
    put_u8(blob, static_cast<uint8_t>(bank.head_mode));
  }

  auto tensors = named_parameters(model);
  for (auto& b : named_buffers(model)) tensors.push_back(std::move(b));
  put_u32(blob, static_cast<uint32_t>(tensors.size()));
  for (auto& t : tensors) {
    put_string(blob, t.name);
    const auto& shape = t.tensor.shape();
    put_u32(blob, static_cast<uint32_t>(shape.size()));
    for (int d : shape) put_u32(blob, static_cast<uint32_t>(d));
    std::string payload;
    const auto data = t.tensor.raw_data();
    payload.reserve(data.size() * 4);
    for (const T v : data) put_f32(payload, static_cast<float>(v));
    put_u64(blob, fnv1a64(payload.data(), payload.size()));
    blob.append(payload);
  }
  return blob;
}

template <typename T>
void save_checkpoint(DilModel<T>& model, const std::string& path) {
  const std::string blob = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw CheckpointError("checkpoint: short write to " + path);
}

template <typename T>
DilModel<T> deserialize_checkpoint(const std::string& blob,
                                   const std::string& origin) {
  using namespace ckpt;
  if (blob.size() < 5 || std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw CheckpointError("checkpoint: " + origin + " is not a checkpoint");
  }
  Reader r{reinterpret_cast<const unsigned char*>(blob.data()), blob.size(),
           4};
  const uint8_t version = r.u8();
  if (version != kVersion) {
    throw CheckpointError("checkpoint: " + origin +
                          " has unsupported version " +
                          std::to_string(version));
  }

  ArchConfig arch;
  arch.n_blocks = static_cast<int>(r.u32());
  arch.convs_per_block = static_cast<int>(r.u32());
  arch.f = static_cast<int>(r.u32());
  arch.t = static_cast<int>(r.u32());
  if (arch.n_blocks < 1 || arch.n_blocks > 1024) {
    throw CheckpointError("checkpoint: implausible block count " +
                          std::to_string(arch.n_blocks));
  }
  arch.channels.clear();
  for (int b = 0; b < arch.n_blocks; ++b) {
    arch.channels.push_back(static_cast<int>(r.u32()));
  }

  const uint32_t vocab_count = r.u32();
  std::vector<std::string> vocab;
  vocab.reserve(vocab_count);
  for (uint32_t i = 0; i < vocab_count; ++i) vocab.push_back(r.str());

  struct BankMeta {
    DomainSpec spec;
    HeadMode head_mode;
  };
  const uint32_t bank_count = r.u32();
  if (bank_count == 0) {
    throw CheckpointError("checkpoint: " + origin + " has no banks");
  }
  std::vector<BankMeta> banks;
  banks.reserve(bank_count);
  for (uint32_t b = 0; b < bank_count; ++b) {
    BankMeta meta;
    meta.spec.domain_id = static_cast<int>(r.u32());
    meta.spec.name = r.str();
    const uint32_t n_classes = r.u32();
    for (uint32_t c = 0; c < n_classes; ++c) {
      meta.spec.class_list.push_back(r.str());
    }
    const uint8_t task = r.u8();
    if (task > 1) {
      throw CheckpointError("checkpoint: bank " + std::to_string(b) +
                            " has unknown task code " + std::to_string(task));
    }
    meta.spec.task = task == 0 ? TaskKind::kSingleLabel : TaskKind::kMultiLabel;
    const uint8_t mode = r.u8();
    if (mode > static_cast<uint8_t>(HeadMode::kSharedBase)) {
      throw CheckpointError("checkpoint: bank " + std::to_string(b) +
                            " has unknown head mode code " +
                            std::to_string(mode));
    }
    meta.head_mode = static_cast<HeadMode>(mode);
    banks.push_back(std::move(meta));
  }
  if (banks.front().head_mode != HeadMode::kBase) {
    throw CheckpointError("checkpoint: bank 0 must use the base head");
  }

  // Metadata inconsistencies surface as builder errors; to the caller all
  // of them mean one thing: the file does not describe a loadable model.
  DilModel<T> model;
  try {
    arch.validate();
    model = build_model<T>(arch, vocab, banks.front().spec, 0);
    for (uint32_t b = 1; b < bank_count; ++b) {
      add_domain(model, banks[b].spec, banks[b].head_mode);
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint: " + origin +
                          " describes an invalid model: " + e.what());
  }

  const uint32_t tensor_count = r.u32();
  std::map<std::string, size_t> offsets;  // name -> start of dims block
  for (uint32_t i = 0; i < tensor_count; ++i) {
    const std::string name = r.str();
    if (!offsets.emplace(name, r.off).second) {
      throw CheckpointError("checkpoint: duplicate tensor '" + name + "'");
    }
    const uint32_t rank = r.u32();
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = r.u32();
      if (dim == 0) {
        throw CheckpointError("checkpoint: tensor '" + name +
                              "' has a zero dimension");
      }
      numel *= dim;
      if (numel > (r.n / 4) + 1) {
        throw CheckpointError("checkpoint: truncated file");
      }
    }
    r.u64();  // digest, consumed during the fill pass
    r.need(numel * 4);
    r.off += numel * 4;
  }
  if (r.off != r.n) {
    throw CheckpointError("checkpoint: " + origin + " has trailing bytes");
  }

  auto tensors = named_parameters(model);
  for (auto& b : named_buffers(model)) tensors.push_back(std::move(b));
  if (tensors.size() != offsets.size()) {
    throw CheckpointError("checkpoint: " + origin + " holds " +
                          std::to_string(offsets.size()) +
                          " tensors but the model needs " +
                          std::to_string(tensors.size()));
  }
  for (auto& t : tensors) {
    const auto it = offsets.find(t.name);
    if (it == offsets.end()) {
      throw CheckpointError("checkpoint: missing tensor '" + t.name + "'");
    }
    Reader tr{r.p, r.n, it->second};
    const uint32_t rank = tr.u32();
    const auto& shape = t.tensor.shape();
    bool shape_ok = rank == shape.size();
    std::vector<uint32_t> dims(rank);
    for (uint32_t d = 0; d < rank; ++d) {
      dims[d] = tr.u32();
      if (shape_ok && dims[d] != static_cast<uint32_t>(shape[d])) {
        shape_ok = false;
      }
    }
    if (!shape_ok) {
      throw CheckpointError("checkpoint: tensor '" + t.name +
                            "' shape does not match the model");
    }
    const uint64_t digest = tr.u64();
    auto data = t.tensor.raw_data();
    if (digest != fnv1a64(tr.p + tr.off, data.size() * 4)) {
      throw CheckpointError("checkpoint: tensor '" + t.name +
                            "' failed its digest check");
    }
    for (size_t i = 0; i < data.size(); ++i) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<uint32_t>(tr.p[tr.off + i * 4 +
                                           static_cast<size_t>(b)])
                << (8 * b);
      }
      float v;
      std::memcpy(&v, &bits, 4);
      data[i] = static_cast<T>(v);
    }
  }
  return model;
}

template <typename T>
DilModel<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return deserialize_checkpoint<T>(blob, path);
}

}  // namespace dil
