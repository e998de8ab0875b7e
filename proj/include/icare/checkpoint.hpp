#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "icare/optim.hpp"
#include "icare/params.hpp"
#include "icare/serialize.hpp"

namespace icare {

/// Named non-trainable model state (batchnorm running statistics).
template <typename S>
using BufferList = std::vector<std::pair<std::string, Tensor<S>*>>;

/// Writes a model checkpoint: "__meta__" JSON record first, then every
/// parameter in registration order, then buffers, then (optionally) the Adam
/// state under "__adam__/...".
template <typename S>
void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const ParameterSet<S>& params, const BufferList<S>& buffers,
                     const AdamState<S>* adam = nullptr) {
  std::vector<records::Record> recs;
  recs.push_back(records::from_string("__meta__", meta.dump()));
  for (const auto* p : params.all()) recs.push_back(records::from_tensor(p->name, p->value));
  for (const auto& [name, buf] : buffers) recs.push_back(records::from_tensor(name, *buf));
  if (adam != nullptr) {
    recs.push_back(records::from_tensor("__adam__/t",
                                        Tensor<S>::scalar(static_cast<S>(adam->t))));
    for (std::size_t i = 0; i < params.count(); ++i) {
      recs.push_back(records::from_tensor("__adam__/m/" + params.all()[i]->name, adam->m[i]));
      recs.push_back(records::from_tensor("__adam__/v/" + params.all()[i]->name, adam->v[i]));
    }
  }
  records::write_file(path, kCheckpointMagic, recs);
}

/// Loads a checkpoint into an existing model. Every parameter and buffer must
/// be present with an identical shape. Adam state is restored when `adam` is
/// non-null and the records carry it; `adam_loaded` reports which happened.
template <typename S>
nlohmann::json load_checkpoint(const std::string& path, ParameterSet<S>& params,
                               const BufferList<S>& buffers, AdamState<S>* adam = nullptr,
                               bool* adam_loaded = nullptr) {
  const auto recs = records::read_file(path, kCheckpointMagic);
  nlohmann::json meta;
  const auto& meta_rec = records::require(recs, "__meta__", path);
  meta = nlohmann::json::parse(records::to_string(meta_rec));

  auto load_into = [&](const std::string& name, Tensor<S>& dst) {
    const auto& rec = records::require(recs, name, path);
    Tensor<S> loaded = records::to_tensor<S>(rec);
    if (!loaded.same_shape(dst))
      throw IoError("record '" + name + "' shape " + shape_str(loaded.shape()) +
                    " does not match model shape " + shape_str(dst.shape()) + " in " + path);
    dst = std::move(loaded);
  };

  for (auto* p : params.all()) load_into(p->name, p->value);
  for (const auto& [name, buf] : buffers) load_into(name, *buf);

  if (adam_loaded) *adam_loaded = false;
  if (adam != nullptr && records::find(recs, "__adam__/t") != nullptr) {
    *adam = AdamState<S>::init(params);
    adam->t = static_cast<std::int64_t>(
        records::to_tensor<S>(records::require(recs, "__adam__/t", path))[0]);
    for (std::size_t i = 0; i < params.count(); ++i) {
      load_into("__adam__/m/" + params.all()[i]->name, adam->m[i]);
      load_into("__adam__/v/" + params.all()[i]->name, adam->v[i]);
    }
    if (adam_loaded) *adam_loaded = true;
  }
  return meta;
}

/// Reads only the "__meta__" JSON of a checkpoint.
inline nlohmann::json peek_checkpoint_meta(const std::string& path) {
  const auto recs = records::read_file(path, kCheckpointMagic);
  return nlohmann::json::parse(records::to_string(records::require(recs, "__meta__", path)));
}

}  // namespace icare
