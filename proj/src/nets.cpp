#include "nesde/nets.hpp"

#include <fstream>

#include "nesde/serialize.hpp"

namespace nesde {

namespace {

void init_mlp(Vec& params, const MlpSpec& spec, std::mt19937_64& rng) {
    params = Vec::Zero(spec.param_count());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l + 1 < spec.layer_sizes.size(); ++l) {
        const int in = spec.layer_sizes[l];
        const int out = spec.layer_sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (int i = 0; i < in * out; ++i) params(off + i) = u(rng);
        off += static_cast<Eigen::Index>(in + 1) * out;  // biases stay zero
    }
}

MlpSpec make_spec(int in, const std::vector<int>& hidden, int out) {
    MlpSpec s;
    s.layer_sizes.push_back(in);
    for (int h : hidden) s.layer_sizes.push_back(h);
    s.layer_sizes.push_back(out);
    return s;
}

Json spec_to_json(const MlpSpec& s) {
    return Json{{"layer_sizes", s.layer_sizes},
                {"activation", s.activation == MlpSpec::Act::kTanh ? "tanh" : "relu"}};
}

MlpSpec spec_from_json(const Json& j) {
    MlpSpec s;
    s.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    const std::string act = j.at("activation").get<std::string>();
    s.activation = act == "relu" ? MlpSpec::Act::kRelu : MlpSpec::Act::kTanh;
    return s;
}

}  // namespace

HyperModel init_model(const HeadConfig& head, int context_dim, std::uint64_t seed,
                      const std::vector<int>& g1_hidden, const std::vector<int>& g2_hidden,
                      const std::vector<int>& prior_hidden) {
    if (head.n_real() < 0) throw ConfigError("n_complex_pairs exceeds state dimension");
    if (head.m > head.n) throw ConfigError("observable dimension exceeds state dimension");
    HyperModel model;
    model.head = head;
    model.g2_spec = make_spec(head.g2_input_size(), g2_hidden, head.g2_output_size());
    model.g1_spec = make_spec(context_dim, g1_hidden, model.g2_spec.param_count());
    model.prior_spec = make_spec(context_dim, prior_hidden, head.prior_output_size());

    std::mt19937_64 rng(seed);
    init_mlp(model.theta, model.g1_spec, rng);
    init_mlp(model.prior_params, model.prior_spec, rng);

    model.b_mask.assign(static_cast<std::size_t>(head.n), false);
    model.b_global = Mat::Zero(head.n, head.k);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int i = 0; i < head.n; ++i)
        for (int j = 0; j < head.k; ++j) model.b_global(i, j) = u(rng);
    return model;
}

Vec pack_trainables(const HyperModel& model) {
    Vec flat(model.trainable_count());
    Eigen::Index p = 0;
    flat.segment(p, model.theta.size()) = model.theta;
    p += model.theta.size();
    flat.segment(p, model.prior_params.size()) = model.prior_params;
    p += model.prior_params.size();
    for (int i = 0; i < model.head.n; ++i) {
        if (!model.b_mask.empty() && model.b_mask[static_cast<std::size_t>(i)]) continue;
        for (int j = 0; j < model.head.k; ++j) flat(p++) = model.b_global(i, j);
    }
    return flat;
}

void unpack_trainables(HyperModel& model, const Vec& flat) {
    if (flat.size() != model.trainable_count())
        throw NumericError("trainable vector size mismatch");
    Eigen::Index p = 0;
    model.theta = flat.segment(p, model.g1_spec.param_count());
    p += model.theta.size();
    model.prior_params = flat.segment(p, model.prior_spec.param_count());
    p += model.prior_params.size();
    for (int i = 0; i < model.head.n; ++i) {
        if (!model.b_mask.empty() && model.b_mask[static_cast<std::size_t>(i)]) {
            model.b_global.row(i).setZero();
            continue;
        }
        for (int j = 0; j < model.head.k; ++j) model.b_global(i, j) = flat(p++);
    }
}

void save_checkpoint(const HyperModel& model, const std::string& path,
                     const std::string& extra_json) {
    Json j;
    j["format_version"] = 1;
    j["head_config"] = Json{{"n", model.head.n},
                            {"m", model.head.m},
                            {"k", model.head.k},
                            {"n_complex_pairs", model.head.n_complex_pairs},
                            {"stable", model.head.stable},
                            {"hypernet_disabled", model.head.hypernet_disabled},
                            {"interval_dt", model.head.interval_dt}};
    j["g1_spec"] = spec_to_json(model.g1_spec);
    j["g2_spec"] = spec_to_json(model.g2_spec);
    j["prior_spec"] = spec_to_json(model.prior_spec);
    j["theta"] = vec_to_json(model.theta);
    j["prior_params"] = vec_to_json(model.prior_params);
    j["B_global"] = mat_to_json(model.b_global);
    Json mask = Json::array();
    for (bool b : model.b_mask) mask.push_back(b);
    j["B_mask"] = std::move(mask);
    if (!extra_json.empty()) j["trainer_state"] = Json::parse(extra_json);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << j.dump() << "\n";
}

HyperModel load_checkpoint(const std::string& path, std::string* extra_json) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read checkpoint: " + path);
    Json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("malformed checkpoint " + path + ": " + e.what());
    }
    if (j.value("format_version", 0) != 1) throw DataError("unsupported checkpoint version");
    HyperModel model;
    const Json& h = j.at("head_config");
    model.head.n = h.at("n").get<int>();
    model.head.m = h.at("m").get<int>();
    model.head.k = h.at("k").get<int>();
    model.head.n_complex_pairs = h.at("n_complex_pairs").get<int>();
    model.head.stable = h.at("stable").get<bool>();
    model.head.hypernet_disabled = h.at("hypernet_disabled").get<bool>();
    model.head.interval_dt = h.at("interval_dt").get<double>();
    model.g1_spec = spec_from_json(j.at("g1_spec"));
    model.g2_spec = spec_from_json(j.at("g2_spec"));
    model.prior_spec = spec_from_json(j.at("prior_spec"));
    model.theta = json_to_vec(j.at("theta"));
    model.prior_params = json_to_vec(j.at("prior_params"));
    model.b_global = json_to_mat(j.at("B_global"), model.head.k);
    model.b_mask.clear();
    for (const auto& b : j.at("B_mask")) model.b_mask.push_back(b.get<bool>());
    if (model.g1_spec.output_size() != model.g2_spec.param_count())
        throw DataError("checkpoint inconsistent: g1 output != g2 parameter count");
    if (model.theta.size() != model.g1_spec.param_count() ||
        model.prior_params.size() != model.prior_spec.param_count())
        throw DataError("checkpoint inconsistent: parameter vector sizes");
    if (extra_json != nullptr)
        *extra_json = j.contains("trainer_state") ? j.at("trainer_state").dump() : "";
    return model;
}

}  // namespace nesde
