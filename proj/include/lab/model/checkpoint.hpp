#pragma once

#include "lab/model/policy.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace lab::model {

// Self-describing tensor container: magic, version, length-prefixed JSON
// manifest (architecture, vocab hash, adapter metadata, provenance), then the
// raw float64 column-major tensor payload in manifest order.
inline constexpr char kCheckpointMagic[8] = {'L', 'A', 'B', 'C', 'K', 'P', 'T', '\n'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    std::string provenance;  // config hash + stage, free-form
    uint64_t vocab_hash = 0;
};

template <typename S>
void save_checkpoint(const std::string& path, const PolicyT<S>& policy, const CheckpointMeta& meta) {
    nlohmann::json manifest;
    manifest["config"] = {{"layers", policy.cfg.layers}, {"heads", policy.cfg.heads},
                          {"dim", policy.cfg.dim},       {"context", policy.cfg.context},
                          {"ffn_mult", policy.cfg.ffn_mult}, {"vocab", policy.cfg.vocab}};
    manifest["provenance"] = meta.provenance;
    manifest["vocab_hash"] = meta.vocab_hash;
    manifest["scalar"] = "f64";

    nlohmann::json tensors = nlohmann::json::array();
    auto& mutable_policy = const_cast<PolicyT<S>&>(policy);
    std::vector<const Mat<S>*> order;
    mutable_policy.params.visit([&](const std::string& name, Mat<S>& m) {
        tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
        order.push_back(&m);
    });
    if (policy.adapter) {
        manifest["adapter"] = {{"rank", policy.adapter->rank}, {"alpha", policy.adapter->alpha}};
        mutable_policy.adapter->visit([&](const std::string& name, Mat<S>& m) {
            tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
            order.push_back(&m);
        });
    }
    manifest["tensors"] = tensors;
    const std::string header = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const Mat<S>* m : order) {
        Mat<double> d = m->template cast<double>();
        out.write(reinterpret_cast<const char*>(d.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(d.size())));
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

template <typename S>
PolicyT<S> load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw DataError("not a checkpoint file: " + path);
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version");
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    nlohmann::json manifest = nlohmann::json::parse(header);

    ModelConfig cfg;
    const auto& jc = manifest.at("config");
    cfg.layers = jc.at("layers").get<int>();
    cfg.heads = jc.at("heads").get<int>();
    cfg.dim = jc.at("dim").get<int>();
    cfg.context = jc.at("context").get<int>();
    cfg.ffn_mult = jc.at("ffn_mult").get<int>();
    cfg.vocab = jc.at("vocab").get<int>();

    PolicyT<S> policy;
    policy.cfg = cfg;
    policy.params = init_params<S>(cfg, 0);
    if (manifest.contains("adapter")) {
        policy.adapter = init_adapter<S>(cfg, manifest["adapter"].at("rank").get<int>(),
                                         static_cast<S>(manifest["adapter"].at("alpha").get<double>()), 0);
    }

    std::vector<Mat<S>*> order;
    policy.params.visit([&](const std::string&, Mat<S>& m) { order.push_back(&m); });
    if (policy.adapter) {
        policy.adapter->visit([&](const std::string&, Mat<S>& m) { order.push_back(&m); });
    }
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != order.size()) throw DataError("checkpoint tensor table mismatch");
    for (std::size_t i = 0; i < order.size(); ++i) {
        auto rows = tensors[i].at("rows").get<Eigen::Index>();
        auto cols = tensors[i].at("cols").get<Eigen::Index>();
        if (rows != order[i]->rows() || cols != order[i]->cols()) {
            throw DataError("checkpoint tensor shape mismatch at " +
                            tensors[i].at("name").get<std::string>());
        }
        Mat<double> d(rows, cols);
        in.read(reinterpret_cast<char*>(d.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(d.size())));
        *order[i] = d.cast<S>();
    }
    if (!in) throw DataError("checkpoint payload truncated: " + path);

    if (meta_out) {
        meta_out->provenance = manifest.value("provenance", "");
        meta_out->vocab_hash = manifest.value("vocab_hash", uint64_t{0});
    }
    return policy;
}

}  // namespace lab::model
