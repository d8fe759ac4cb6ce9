// Copyright 2026 The recovnet contributors
// SPDX-License-Identifier: Apache-2.0

#include "recovnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "recovnet/error.hpp"
#include "recovnet/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace recovnet::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'R', 'C', 'V', 'N', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const std::vector<char>& bytes, std::size_t n) {
  return hash_string(std::string_view(bytes.data(), n));
}

[[noreturn]] void fail(CheckpointFailure f, const fs::path& path, const std::string& what) {
  throw CheckpointError(f, "checkpoint " + path.string() + ": " + what);
}

json layers_to_json(const Sequential& s) {
  json arr = json::array();
  for (const auto& c : s.topology()) arr.push_back({{"kind", c.kind}, {"name", c.name}, {"attrs", c.attrs}});
  return arr;
}

std::vector<LayerConfig> layers_from_json(const json& arr) {
  std::vector<LayerConfig> out;
  for (const auto& j : arr)
    out.push_back({j.at("kind").get<std::string>(), j.at("name").get<std::string>(),
                   j.at("attrs").get<std::map<std::string, double>>()});
  return out;
}

json encoder_to_json(const EncoderSpec& s) {
  return {{"name", s.name},
          {"downsample_factor", s.downsample_factor},
          {"output_channels", s.output_channels},
          {"input_channels", s.input_channels},
          {"init", s.init == EncoderInit::kRandom ? "random" : "pretrained-checkpoint"},
          {"seed", s.seed},
          {"checkpoint", s.checkpoint.generic_string()}};
}

EncoderSpec encoder_from_json(const json& j) {
  EncoderSpec s;
  s.name = j.at("name").get<std::string>();
  s.downsample_factor = j.at("downsample_factor").get<int>();
  s.output_channels = j.at("output_channels").get<int>();
  s.input_channels = j.at("input_channels").get<int>();
  s.init = j.at("init").get<std::string>() == "random" ? EncoderInit::kRandom : EncoderInit::kPretrainedCheckpoint;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.checkpoint = j.at("checkpoint").get<std::string>();
  return s;
}

json decoder_to_json(const DecoderSpec& s) {
  return {{"stages", s.stages}, {"stage_filters", s.stage_filters}, {"final_filters", s.final_filters},
          {"kernel", s.kernel}, {"seed", s.seed}};
}

DecoderSpec decoder_from_json(const json& j) {
  DecoderSpec s;
  s.stages = j.at("stages").get<int>();
  s.stage_filters = j.at("stage_filters").get<std::vector<int>>();
  s.final_filters = j.at("final_filters").get<int>();
  s.kernel = j.at("kernel").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(const std::vector<char>& bytes, std::size_t end, const fs::path& path)
      : bytes_(bytes), end_(end), path_(path) {}
  template <typename T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    if (n > end_ - pos_) fail(CheckpointFailure::kCorrupt, path_, "unexpected end of data");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  const fs::path& path_;
};

using TensorList = std::vector<std::pair<std::string, const Tensor*>>;

void write_file(const fs::path& path, ModelKind kind, const json& meta, const TensorList& tensors) {
  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(kind));
  const std::string meta_text = meta.dump();
  w.put(static_cast<std::uint64_t>(meta_text.size()));
  w.put_bytes(meta_text.data(), meta_text.size());
  w.put(static_cast<std::uint64_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.put_string(name);
    w.put(static_cast<std::uint32_t>(t->shape().rank()));
    for (auto d : t->shape().dims()) w.put(static_cast<std::int64_t>(d));
    w.put_bytes(t->data(), t->size() * sizeof(double));
  }
  w.put(fnv1a(w.bytes(), w.bytes().size()));

  std::error_code dir_ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), dir_ec);
  if (dir_ec) fail(CheckpointFailure::kIo, path, "cannot create directory: " + dir_ec.message());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(CheckpointFailure::kIo, path, "cannot open for writing");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) fail(CheckpointFailure::kIo, path, "write failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(CheckpointFailure::kIo, path, "rename failed: " + ec.message());
}

struct RawCheckpoint {
  ModelKind kind;
  std::uint32_t version;
  json meta;
  std::map<std::string, Tensor> tensors;
};

RawCheckpoint read_file(const fs::path& path, bool want_tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(CheckpointFailure::kIo, path, "cannot open");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t kMinSize = sizeof(kMagic) + 4 + 4 + 8 + 8 + 8;
  if (bytes.size() < kMinSize || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    fail(CheckpointFailure::kCorrupt, path, "not a checkpoint file");
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (stored != fnv1a(bytes, body)) fail(CheckpointFailure::kCorrupt, path, "checksum mismatch (truncated or damaged)");

  Reader r(bytes, body, path);
  char magic[sizeof(kMagic)];
  r.get_bytes(magic, sizeof(magic));
  RawCheckpoint raw;
  raw.version = r.get<std::uint32_t>();
  if (raw.version != kCheckpointVersion)
    fail(CheckpointFailure::kVersion, path,
         "format version " + std::to_string(raw.version) + ", expected " + std::to_string(kCheckpointVersion));
  const auto kind = r.get<std::uint32_t>();
  if (kind != static_cast<std::uint32_t>(ModelKind::kSegmentation) &&
      kind != static_cast<std::uint32_t>(ModelKind::kClassifier))
    fail(CheckpointFailure::kCorrupt, path, "unknown model kind");
  raw.kind = static_cast<ModelKind>(kind);
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > body) fail(CheckpointFailure::kCorrupt, path, "bad metadata length");
  std::string meta_text(meta_len, '\0');
  r.get_bytes(meta_text.data(), meta_len);
  try {
    raw.meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    fail(CheckpointFailure::kCorrupt, path, std::string("bad metadata: ") + e.what());
  }
  if (!want_tensors) return raw;

  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) fail(CheckpointFailure::kCorrupt, path, "bad tensor rank");
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) {
      d = r.get<std::int64_t>();
      if (d < 0 || d > (std::int64_t{1} << 32)) fail(CheckpointFailure::kCorrupt, path, "bad tensor dims");
    }
    Tensor t{Shape(dims)};
    r.get_bytes(t.data(), t.size() * sizeof(double));
    raw.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) fail(CheckpointFailure::kCorrupt, path, "trailing bytes");
  return raw;
}

json base_meta(const Encoder& enc, const Metadata& extra) {
  return {{"format", "recovnet-checkpoint"},
          {"encoder", encoder_to_json(enc.spec)},
          {"encoder_layers", layers_to_json(enc.layers)},
          {"class_order", {"control", "covid"}},
          {"metadata", extra}};
}

void append_state(TensorList& out, const std::string& prefix, const Sequential& s) {
  for (const auto& [name, t] : s.state()) out.emplace_back(prefix + name, t);
}

// Rebuilds a stack from its stored topology. Registered encoders must reproduce
// the stored topology exactly.
Sequential rebuild_encoder_layers(const fs::path& path, const EncoderSpec& spec, const json& stored) {
  const auto topology = layers_from_json(stored);
  const auto names = registered_encoders();
  if (std::find(names.begin(), names.end(), spec.name) != names.end()) {
    EncoderSpec plain = spec;
    plain.init = EncoderInit::kRandom;
    Sequential expected = build_encoder(plain).layers;
    if (expected.topology() != topology)
      fail(CheckpointFailure::kSpecMismatch, path, "stored encoder layers do not match encoder '" + spec.name + "'");
    return expected;
  }
  return Sequential::from_topology(topology);
}

void fill_state(const fs::path& path, const std::string& prefix, Sequential& s,
                std::map<std::string, Tensor>& tensors) {
  for (auto& [name, t] : s.state()) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) fail(CheckpointFailure::kSpecMismatch, path, "missing tensor " + prefix + name);
    if (it->second.shape() != t->shape())
      fail(CheckpointFailure::kSpecMismatch, path,
           "tensor " + prefix + name + " has shape " + it->second.shape().str() + ", expected " + t->shape().str());
    *t = std::move(it->second);
    tensors.erase(it);
  }
}

void check_kind(const fs::path& path, const RawCheckpoint& raw, ModelKind want) {
  if (raw.kind != want)
    fail(CheckpointFailure::kKindMismatch, path,
         std::string("holds a ") + (raw.kind == ModelKind::kClassifier ? "classifier" : "segmentation") +
             " model, expected a " + (want == ModelKind::kClassifier ? "classifier" : "segmentation") + " model");
}

template <typename F>
auto guarded(const fs::path& path, F&& f) {
  try {
    return f();
  } catch (const CheckpointError&) {
    throw;
  } catch (const json::exception& e) {
    fail(CheckpointFailure::kCorrupt, path, std::string("bad metadata: ") + e.what());
  } catch (const Error& e) {
    fail(CheckpointFailure::kSpecMismatch, path, e.what());
  }
}

}  // namespace

void save_checkpoint(const SegNetwork& net, const fs::path& path, const Metadata& metadata) {
  json meta = base_meta(net.encoder(), metadata);
  meta["decoder"] = decoder_to_json(net.decoder().spec);
  meta["decoder_layers"] = layers_to_json(net.decoder().layers);
  TensorList tensors;
  append_state(tensors, "encoder.", net.encoder().layers);
  append_state(tensors, "decoder.", net.decoder().layers);
  write_file(path, ModelKind::kSegmentation, meta, tensors);
}

void save_checkpoint(const Classifier& clf, const fs::path& path, const Metadata& metadata) {
  json meta = base_meta(clf.encoder(), metadata);
  meta["head_layers"] = layers_to_json(clf.head());
  TensorList tensors;
  append_state(tensors, "encoder.", clf.encoder().layers);
  append_state(tensors, "head.", clf.head());
  write_file(path, ModelKind::kClassifier, meta, tensors);
}

CheckpointInfo read_checkpoint_info(const fs::path& path) {
  RawCheckpoint raw = read_file(path, false);
  return guarded(path, [&] {
    CheckpointInfo info;
    info.kind = raw.kind;
    info.version = raw.version;
    info.encoder = encoder_from_json(raw.meta.at("encoder"));
    if (raw.meta.contains("decoder")) info.decoder = decoder_from_json(raw.meta.at("decoder"));
    info.class_order = raw.meta.at("class_order").get<std::vector<std::string>>();
    info.metadata = raw.meta.at("metadata").get<Metadata>();
    return info;
  });
}

SegNetwork load_segmentation_checkpoint(const fs::path& path) {
  RawCheckpoint raw = read_file(path, true);
  check_kind(path, raw, ModelKind::kSegmentation);
  return guarded(path, [&] {
    const EncoderSpec spec = encoder_from_json(raw.meta.at("encoder"));
    Encoder enc{spec, rebuild_encoder_layers(path, spec, raw.meta.at("encoder_layers"))};
    const DecoderSpec dspec = decoder_from_json(raw.meta.at("decoder"));
    Decoder dec = build_decoder(dspec, spec.output_channels);
    if (dec.layers.topology() != layers_from_json(raw.meta.at("decoder_layers")))
      fail(CheckpointFailure::kSpecMismatch, path, "stored decoder layers do not match the decoder spec");
    fill_state(path, "encoder.", enc.layers, raw.tensors);
    fill_state(path, "decoder.", dec.layers, raw.tensors);
    if (!raw.tensors.empty()) fail(CheckpointFailure::kSpecMismatch, path, "unexpected tensor " + raw.tensors.begin()->first);
    return SegNetwork(std::move(enc), std::move(dec));
  });
}

Classifier load_classifier_checkpoint(const fs::path& path) {
  RawCheckpoint raw = read_file(path, true);
  check_kind(path, raw, ModelKind::kClassifier);
  return guarded(path, [&] {
    const EncoderSpec spec = encoder_from_json(raw.meta.at("encoder"));
    Encoder enc{spec, rebuild_encoder_layers(path, spec, raw.meta.at("encoder_layers"))};
    Sequential head = Sequential::from_topology(layers_from_json(raw.meta.at("head_layers")));
    fill_state(path, "encoder.", enc.layers, raw.tensors);
    fill_state(path, "head.", head, raw.tensors);
    if (!raw.tensors.empty()) fail(CheckpointFailure::kSpecMismatch, path, "unexpected tensor " + raw.tensors.begin()->first);
    return Classifier(std::move(enc), std::move(head));
  });
}

void load_encoder_weights(Encoder& encoder, const fs::path& path) {
  RawCheckpoint raw = read_file(path, true);
  guarded(path, [&] {
    if (layers_from_json(raw.meta.at("encoder_layers")) != encoder.layers.topology())
      fail(CheckpointFailure::kSpecMismatch, path, "encoder layers differ from the requested encoder");
    fill_state(path, "encoder.", encoder.layers, raw.tensors);
    return 0;
  });
}

}  // namespace recovnet::nn
