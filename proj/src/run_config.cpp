#include "sage/run_config.hpp"

#include <cmath>
#include <stdexcept>

namespace sage {

using nlohmann::json;

namespace {

json adam_to_json(const nn::AdamConfig& a) {
    return {{"lr", a.lr},   {"beta1", a.beta1},           {"beta2", a.beta2},
            {"eps", a.eps}, {"weight_decay", a.weight_decay}, {"grad_clip", a.grad_clip}};
}

nn::AdamConfig adam_from_json(const json& j) {
    nn::AdamConfig a;
    a.lr = j.at("lr").get<double>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.eps = j.at("eps").get<double>();
    a.weight_decay = j.at("weight_decay").get<double>();
    a.grad_clip = j.at("grad_clip").get<double>();
    return a;
}

json reward_to_json(const RewardConfig& r) {
    return {{"alpha", r.alpha},
            {"beta", r.beta},
            {"gamma", r.gamma},
            {"lambda_rep", r.lambda_rep},
            {"lambda_fmt", r.lambda_fmt}};
}

bool is_integral(const json& v) {
    if (v.is_number_integer()) return true;
    if (!v.is_number_float()) return false;
    double d = v.get<double>();
    return std::isfinite(d) && d == std::floor(d);
}

bool compatible(const json& base, const json& v) {
    if (base.is_number_unsigned()) return is_integral(v) && v.get<double>() >= 0.0;
    if (base.is_number_integer()) return is_integral(v);
    if (base.is_number_float()) return v.is_number();
    if (base.is_boolean()) return v.is_boolean();
    if (base.is_string()) return v.is_string();
    if (base.is_array()) return v.is_array();
    return base.type() == v.type();
}

}  // namespace

json merge_checked(const json& base, const json& overlay, const std::string& where) {
    if (!base.is_object()) {
        if (!compatible(base, overlay)) {
            throw std::invalid_argument("config key '" + where + "': expected " + std::string(base.type_name()) +
                                        ", got " + overlay.dump());
        }
        // Keep unsigned fields unsigned so later get<size_t>() works.
        if (base.is_number_unsigned()) return json(static_cast<std::uint64_t>(overlay.get<double>()));
        if (base.is_number_integer()) return json(static_cast<std::int64_t>(overlay.get<double>()));
        if (base.is_number_float()) return json(overlay.get<double>());
        return overlay;
    }
    if (!overlay.is_object()) throw std::invalid_argument("config key '" + where + "': expected an object");
    json out = base;
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        std::string key = where.empty() ? it.key() : where + "." + it.key();
        if (!base.contains(it.key())) throw std::invalid_argument("unknown config key '" + key + "'");
        out[it.key()] = merge_checked(base.at(it.key()), it.value(), key);
    }
    return out;
}

void apply_assignment(json& j, std::string_view assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw std::invalid_argument("expected key=value, got '" + std::string(assignment) + "'");
    }
    std::string path(assignment.substr(0, eq));
    std::string text(assignment.substr(eq + 1));
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* cur = &j;
    std::size_t start = 0;
    while (true) {
        auto dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw std::invalid_argument("empty segment in '" + path + "'");
        if (!cur->is_object()) *cur = json::object();
        if (dot == std::string::npos) {
            (*cur)[key] = value;
            return;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

json run_config_to_json(const RunConfig& c) {
    const auto& p = c.paths;
    const auto& ft = c.finetune;
    const auto& w = ft.weights;
    const auto& ev = c.evolve;
    return {
        {"seed", c.seed},
        {"paths",
         {{"corpus", p.corpus},
          {"samples", p.samples},
          {"heldout", p.heldout},
          {"triples", p.triples},
          {"graph", p.graph},
          {"reader", p.reader},
          {"writer", p.writer},
          {"out", p.out},
          {"report", p.report},
          {"transcript", p.transcript}}},
        {"reader", config_to_json(c.reader)},
        {"retrieval", {{"k", c.k}, {"seed_budget", c.seed_budget}, {"use_pseudo_queries", c.use_pseudo_queries}}},
        {"graphs", c.graphs},
        {"pretrain",
         {{"steps", c.pretrain.steps},
          {"rates",
           {{"edge", c.pretrain.rates.edge},
            {"feature", c.pretrain.rates.feature},
            {"node", c.pretrain.rates.node}}},
          {"adam", adam_to_json(c.pretrain.adam)},
          {"seed", c.pretrain.seed}}},
        {"finetune",
         {{"weights",
           {{"lambda_bce", w.lambda_bce},
            {"lambda_list", w.lambda_list},
            {"T_a", w.T_a},
            {"w_nce", w.w_nce},
            {"w_size", w.w_size},
            {"w_con", w.w_con},
            {"T_n", w.T_n},
            {"w_doc", w.w_doc}}},
          {"epochs", ft.epochs},
          {"batch_size", ft.batch_size},
          {"adam", adam_to_json(ft.adam)},
          {"patience", ft.patience},
          {"eval_k", ft.eval_k},
          {"seed", ft.seed}}},
        {"env", {{"mode", to_string(c.env.mode)}, {"turn_cap", c.env.turn_cap}, {"reward", reward_to_json(c.env.reward)}}},
        {"writer", c.writer.to_json()},
        {"evolve",
         {{"rounds", ev.rounds},
          {"group_size", ev.group_size},
          {"filter_percentile", ev.filter_percentile},
          {"eval_batch", ev.eval_batch},
          {"updates_per_round", ev.updates_per_round},
          {"step", ev.step},
          {"reward_k", ev.reward_k},
          {"pretrain_round0", ev.pretrain_round0},
          {"seed", ev.seed}}},
        {"synth", synth_spec_to_json(c.synth)},
        {"diagnostics", c.diagnostics.to_json()},
    };
}

RunConfig run_config_from_json(const json& overlay) {
    const RunConfig defaults;
    json j = merge_checked(run_config_to_json(defaults), overlay.is_null() ? json::object() : overlay);

    RunConfig c;
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& p = j.at("paths");
    c.paths.corpus = p.at("corpus");
    c.paths.samples = p.at("samples");
    c.paths.heldout = p.at("heldout");
    c.paths.triples = p.at("triples");
    c.paths.graph = p.at("graph");
    c.paths.reader = p.at("reader");
    c.paths.writer = p.at("writer");
    c.paths.out = p.at("out");
    c.paths.report = p.at("report");
    c.paths.transcript = p.at("transcript");

    c.reader = config_from_json(j.at("reader"));
    const auto& r = j.at("retrieval");
    c.k = r.at("k").get<std::size_t>();
    c.seed_budget = r.at("seed_budget").get<std::size_t>();
    c.use_pseudo_queries = r.at("use_pseudo_queries").get<bool>();
    if (c.k == 0) throw std::invalid_argument("config key 'retrieval.k' must be positive");

    c.graphs = j.at("graphs").get<std::string>();
    if (c.graphs != "oracle" && c.graphs != "writer") {
        throw std::invalid_argument("config key 'graphs' must be 'oracle' or 'writer'");
    }

    const auto& pt = j.at("pretrain");
    c.pretrain.steps = pt.at("steps").get<std::size_t>();
    c.pretrain.rates.edge = pt.at("rates").at("edge").get<double>();
    c.pretrain.rates.feature = pt.at("rates").at("feature").get<double>();
    c.pretrain.rates.node = pt.at("rates").at("node").get<double>();
    c.pretrain.adam = adam_from_json(pt.at("adam"));
    c.pretrain.seed = pt.at("seed").get<std::uint64_t>();

    const auto& ft = j.at("finetune");
    const auto& w = ft.at("weights");
    auto& lw = c.finetune.weights;
    lw.lambda_bce = w.at("lambda_bce").get<double>();
    lw.lambda_list = w.at("lambda_list").get<double>();
    lw.T_a = w.at("T_a").get<double>();
    lw.w_nce = w.at("w_nce").get<double>();
    lw.w_size = w.at("w_size").get<double>();
    lw.w_con = w.at("w_con").get<double>();
    lw.T_n = w.at("T_n").get<double>();
    lw.w_doc = w.at("w_doc").get<double>();
    c.finetune.epochs = ft.at("epochs").get<std::size_t>();
    c.finetune.batch_size = ft.at("batch_size").get<std::size_t>();
    c.finetune.adam = adam_from_json(ft.at("adam"));
    c.finetune.patience = ft.at("patience").get<std::size_t>();
    c.finetune.eval_k = ft.at("eval_k").get<std::size_t>();
    c.finetune.seed = ft.at("seed").get<std::uint64_t>();
    if (c.finetune.batch_size == 0) throw std::invalid_argument("config key 'finetune.batch_size' must be positive");

    const auto& e = j.at("env");
    c.env.mode = parse_write_mode(e.at("mode").get<std::string>());
    c.env.turn_cap = e.at("turn_cap").get<std::size_t>();
    const auto& rw = e.at("reward");
    c.env.reward.alpha = rw.at("alpha").get<double>();
    c.env.reward.beta = rw.at("beta").get<double>();
    c.env.reward.gamma = rw.at("gamma").get<double>();
    c.env.reward.lambda_rep = rw.at("lambda_rep").get<double>();
    c.env.reward.lambda_fmt = rw.at("lambda_fmt").get<double>();

    c.writer = MockWriterParams::from_json(j.at("writer"));

    const auto& ev = j.at("evolve");
    c.evolve.rounds = ev.at("rounds").get<std::size_t>();
    c.evolve.group_size = ev.at("group_size").get<std::size_t>();
    c.evolve.filter_percentile = ev.at("filter_percentile").get<double>();
    c.evolve.eval_batch = ev.at("eval_batch").get<std::size_t>();
    c.evolve.updates_per_round = ev.at("updates_per_round").get<std::size_t>();
    c.evolve.step = ev.at("step").get<double>();
    c.evolve.reward_k = ev.at("reward_k").get<std::size_t>();
    c.evolve.pretrain_round0 = ev.at("pretrain_round0").get<bool>();
    c.evolve.seed = ev.at("seed").get<std::uint64_t>();
    if (c.evolve.group_size == 0) throw std::invalid_argument("config key 'evolve.group_size' must be positive");

    c.synth = synth_spec_from_json(j.at("synth"));
    c.diagnostics = diag::SuiteConfig::from_json(j.at("diagnostics"));
    return c;
}

RetrievalOptions RunConfig::retrieval_options() const {
    RetrievalOptions o = retrieval_options_from(reader, k);
    o.seed_budget = seed_budget;
    o.use_pseudo_queries = use_pseudo_queries;
    return o;
}

EvolveConfig RunConfig::evolve_config() const {
    EvolveConfig e = evolve;
    e.env = env;
    e.pretrain = pretrain;
    e.finetune = finetune;
    return e;
}

}  // namespace sage
