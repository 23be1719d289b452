#include "mcmdpo/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mcmdpo {

namespace {

constexpr const char* kFormat = "mcmdpo-checkpoint-v1";

std::string to_hex(uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

uint64_t from_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

void atomic_write(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string checkpoint_blob_path(const std::string& manifest_path) {
  std::filesystem::path p(manifest_path);
  p.replace_extension(".bin");
  return p.string();
}

void save_checkpoint(const ModelParams& params, const std::string& manifest_path,
                     uint64_t vocab_hash) {
  params.validate();

  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, tensor] : params.tensors) {  // map order: stable by name
    nlohmann::json entry;
    entry["name"] = name;
    entry["group"] = ModelParams::group_of(name);
    entry["shape"] = tensor.shape();
    entry["offset"] = blob.size();
    tensors.push_back(entry);
    blob.append(reinterpret_cast<const char*>(tensor.data().data()),
                tensor.data().size() * sizeof(double));
  }

  const std::string blob_path = checkpoint_blob_path(manifest_path);
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["dims"] = {{"patch_size", params.dims.patch_size},
                      {"embed_dim", params.dims.embed_dim},
                      {"hidden_dim", params.dims.hidden_dim}};
  manifest["vocab"] = {{"vocab_size", params.vocab.vocab_size},
                       {"max_seq_len", params.vocab.max_seq_len},
                       {"pad_id", params.vocab.pad_id},
                       {"bos_id", params.vocab.bos_id},
                       {"eos_id", params.vocab.eos_id},
                       {"person_id", params.vocab.person_id}};
  manifest["vocab_hash"] = to_hex(vocab_hash);
  manifest["blob"] = std::filesystem::path(blob_path).filename().string();
  manifest["blob_bytes"] = blob.size();
  manifest["tensors"] = tensors;

  atomic_write(blob_path, blob);
  atomic_write(manifest_path, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + manifest_path);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint: bad manifest " + manifest_path + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat) {
    throw std::runtime_error("checkpoint: unexpected format in " + manifest_path);
  }

  Checkpoint ckpt;
  ckpt.params.dims.patch_size = manifest.at("dims").at("patch_size").get<int>();
  ckpt.params.dims.embed_dim = manifest.at("dims").at("embed_dim").get<int>();
  ckpt.params.dims.hidden_dim = manifest.at("dims").at("hidden_dim").get<int>();
  const auto& vj = manifest.at("vocab");
  ckpt.params.vocab.vocab_size = vj.at("vocab_size").get<int>();
  ckpt.params.vocab.max_seq_len = vj.at("max_seq_len").get<int>();
  ckpt.params.vocab.pad_id = vj.at("pad_id").get<int>();
  ckpt.params.vocab.bos_id = vj.at("bos_id").get<int>();
  ckpt.params.vocab.eos_id = vj.at("eos_id").get<int>();
  ckpt.params.vocab.person_id = vj.at("person_id").get<int>();
  ckpt.vocab_hash = from_hex(manifest.value("vocab_hash", "0"));

  const auto expected = ModelParams::expected_shapes(ckpt.params.vocab, ckpt.params.dims);

  const std::string blob_path =
      (std::filesystem::path(manifest_path).parent_path() /
       manifest.at("blob").get<std::string>())
          .string();
  std::ifstream blob_in(blob_path, std::ios::binary);
  if (!blob_in) throw std::runtime_error("checkpoint: cannot open blob " + blob_path);
  std::string blob((std::istreambuf_iterator<char>(blob_in)), std::istreambuf_iterator<char>());
  const size_t declared = manifest.at("blob_bytes").get<size_t>();
  if (blob.size() != declared) {
    throw std::runtime_error("checkpoint: blob " + blob_path + " has " +
                             std::to_string(blob.size()) + " bytes, manifest declares " +
                             std::to_string(declared));
  }

  size_t seen = 0;
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = expected.find(name);
    if (it == expected.end()) {
      throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
    }
    const std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    if (shape != it->second) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                               shape_to_string(shape) + ", expected " +
                               shape_to_string(it->second));
    }
    if (entry.at("group").get<std::string>() != ModelParams::group_of(name)) {
      throw std::runtime_error("checkpoint: tensor '" + name + "' declares wrong group");
    }
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    const size_t offset = entry.at("offset").get<size_t>();
    const size_t bytes = static_cast<size_t>(n) * sizeof(double);
    if (offset + bytes > blob.size()) {
      throw std::runtime_error("checkpoint: blob truncated reading '" + name + "': need " +
                               std::to_string(offset + bytes) + " bytes, have " +
                               std::to_string(blob.size()));
    }
    std::vector<double> values(static_cast<size_t>(n));
    std::memcpy(values.data(), blob.data() + offset, bytes);
    ckpt.params.tensors.emplace(name, Tensor(shape, std::move(values)));
    seen += 1;
  }
  if (seen != expected.size()) {
    throw std::runtime_error("checkpoint: manifest lists " + std::to_string(seen) +
                             " tensors, architecture needs " + std::to_string(expected.size()));
  }
  ckpt.params.validate();
  return ckpt;
}

}  // namespace mcmdpo
