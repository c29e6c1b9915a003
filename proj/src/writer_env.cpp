#include "sage/writer_env.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "sage/lenient_json.hpp"
#include "sage/text.hpp"

namespace sage {

std::vector<std::string> Sample::answers() const {
    std::vector<std::string> out{answer};
    for (const auto& a : aliases) {
        if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
    }
    return out;
}

std::string to_string(Flag f) {
    switch (f) {
        case Flag::Construct: return "CONSTRUCT";
        case Flag::Rag: return "RAG";
        case Flag::Stop: return "STOP";
    }
    return "STOP";
}

std::string WriterState::digest() const {
    nlohmann::json j = {{"query", query},          {"mode", to_string(mode)},
                        {"graph", graph_content_hash(graph)},
                        {"processed", processed},  {"remaining", remaining},
                        {"flag", to_string(flag)}, {"turn", turn},
                        {"zero_reward", zero_reward}};
    return text::content_hash(j.dump());
}

bool WriterState::operator==(const WriterState& o) const {
    return query == o.query && mode == o.mode && graph == o.graph && processed == o.processed &&
           remaining == o.remaining && flag == o.flag && turn == o.turn && turn_cap == o.turn_cap &&
           zero_reward == o.zero_reward && format_rewards == o.format_rewards && terminal_fields == o.terminal_fields;
}

std::string action_kind(const Action& a) {
    if (std::holds_alternative<TriplesAction>(a)) return "triples";
    if (std::holds_alternative<TerminateAction>(a)) return "terminate";
    return "illegal";
}

namespace {

const std::set<std::string>& terminal_keys() {
    static const std::set<std::string> k = {"answer", "recall", "precision", "deducible", "terminate", "done"};
    return k;
}

std::optional<std::string> string_field(const nlohmann::json& o, const char* key) {
    auto it = o.find(key);
    if (it == o.end() || !it->is_string()) return std::nullopt;
    return it->get<std::string>();
}

}  // namespace

Action parse_action(std::string_view raw) {
    auto parsed = parse_lenient(raw);
    if (!parsed) return IllegalAction{std::string(raw)};
    const auto& j = *parsed;
    if (j.is_array()) {
        TriplesAction t;
        for (const auto& item : j) {
            if (!item.is_object()) continue;
            auto s = string_field(item, "subject");
            auto r = string_field(item, "relation");
            auto o = string_field(item, "object");
            if (!s || !r || !o) continue;
            if (auto c = clean_triple(Triple{*s, *r, *o, std::nullopt})) t.triples.push_back(*c);
        }
        return t;
    }
    if (j.is_object()) {
        bool terminal = false;
        for (auto it = j.begin(); it != j.end(); ++it) terminal = terminal || terminal_keys().count(it.key()) > 0;
        if (terminal) {
            TerminateAction t;
            t.answer = string_field(j, "answer");
            t.fields = j;
            return t;
        }
    }
    return IllegalAction{std::string(raw)};
}

WriterState reset(const Sample& sample, WriteMode mode, std::size_t turn_cap) {
    if (turn_cap == 0) throw std::invalid_argument("reset: turn cap must be >= 1");
    std::set<std::string> ids;
    for (const auto& d : sample.docs) ids.insert(d.id);
    for (const auto& s : sample.support_doc_ids) {
        if (!ids.count(s)) throw std::invalid_argument("reset: support document not in pool: " + s);
    }
    WriterState st;
    st.query = sample.question;
    st.mode = mode;
    st.turn_cap = turn_cap;
    for (const auto& d : sample.docs) {
        st.graph.add_document(d);
        st.remaining.push_back(d.id);
    }
    return st;
}

StepResult step(WriterState& s, const Action& a) {
    if (s.flag != Flag::Construct) throw std::logic_error("step: state is " + to_string(s.flag) + ", not CONSTRUCT");
    StepResult r;
    if (std::holds_alternative<IllegalAction>(a)) {
        s.flag = Flag::Stop;
        s.zero_reward = true;
        r.done = true;
        return r;
    }
    ++s.turn;
    s.format_rewards.push_back(1.0);
    r.reward = 1.0;
    if (const auto* t = std::get_if<TerminateAction>(&a)) {
        s.terminal_fields = t->fields;
        s.flag = Flag::Rag;
        r.done = true;
        return r;
    }
    const auto& triples = std::get<TriplesAction>(a).triples;
    if (s.mode == WriteMode::Iterative) {
        const std::string doc = s.remaining.front();
        std::vector<Triple> sourced = triples;
        for (auto& t : sourced) t.source_doc = doc;
        s.graph = merge_triples(s.graph, sourced);
        s.remaining.erase(s.remaining.begin());
        s.processed.push_back(doc);
        if (s.remaining.empty()) s.flag = Flag::Rag;
    } else {
        std::vector<Triple> unsourced = triples;
        for (auto& t : unsourced) t.source_doc.reset();
        s.graph = merge_triples(s.graph, unsourced);
        for (auto& d : s.remaining) s.processed.push_back(d);
        s.remaining.clear();
    }
    if (s.flag == Flag::Construct && s.turn >= s.turn_cap) s.flag = Flag::Rag;
    r.done = s.flag != Flag::Construct;
    return r;
}

Evidence evaluate_graph(const GraphMemory& g, std::string_view question, FrozenReader& reader) {
    Evidence ev;
    if (g.num_entities() == 0) {
        ev.empty_graph = true;
        return ev;
    }
    if (!reader.emb) throw std::invalid_argument("evaluate_graph: reader has no embedder");
    PreparedGraph pg = prepare_graph(g, *reader.emb, reader.params.summary_norm());
    auto r = retrieve(question, pg, reader.planner, *reader.emb, reader.params, reader.options);
    for (auto d : r.top_docs) {
        ev.doc_ids.push_back(g.document(d).id);
        ev.scores.push_back(r.doc_scores[d]);
    }
    return ev;
}

std::optional<bool> DeterministicJudge::judge(std::string_view, const std::vector<std::string>& answers,
                                              const std::vector<std::string>& evidence) {
    std::string all = " " + text::normalize_answer(text::join(evidence, " ")) + " ";
    for (const auto& a : answers) {
        std::string na = text::normalize_answer(a);
        if (na.empty()) continue;
        if (all.find(" " + na + " ") != std::string::npos) return true;
    }
    return false;
}

std::optional<std::string> DeterministicAnswerer::answer(std::string_view q, const std::vector<std::string>& answers,
                                                         const std::vector<std::string>& evidence) {
    std::string all = " " + text::normalize_answer(text::join(evidence, " ")) + " ";
    std::string best;
    for (const auto& a : answers) {
        std::string na = text::normalize_answer(a);
        if (na.empty() || all.find(" " + na + " ") == std::string::npos) continue;
        if (na.size() > best.size()) best = na;
    }
    if (!best.empty()) return best;
    auto qt = text::token_set(q);
    std::string sent;
    std::size_t best_overlap = 0;
    for (const auto& doc : evidence) {
        for (const auto& s : text::split_sentences(doc)) {
            std::size_t ov = 0;
            for (const auto& t : text::token_set(s)) ov += qt.count(t);
            if (ov > best_overlap) {
                best_overlap = ov;
                sent = s;
            }
        }
    }
    return sent;
}

double hybrid_task_reward(double r_rec, double r_pre, double r_ded, double alpha, double beta, double gamma) {
    double den = alpha + beta + gamma;
    if (!(den > 0.0)) throw std::invalid_argument("hybrid reward weights must sum to a positive value");
    return (alpha * r_rec + beta * r_pre + gamma * r_ded) / den;
}

nlohmann::json RewardBreakdown::to_json() const {
    return {{"r_rec", r_rec},   {"r_pre", r_pre},     {"r_ded", r_ded},
            {"r_ans", r_ans},   {"r_task", r_task},   {"rho_rep", rho_rep},
            {"format_rewards", format_rewards},       {"R", R},
            {"zero_reward", zero_reward},             {"warnings", warnings}};
}

RewardBreakdown compute_rewards(const std::vector<std::string>& P_k, const Sample& sample, JudgeClient& judge,
                                AnswererClient& answerer, const RewardConfig& cfg) {
    RewardBreakdown b;
    std::set<std::string> gold(sample.support_doc_ids.begin(), sample.support_doc_ids.end());
    std::set<std::string> got(P_k.begin(), P_k.end());
    std::size_t hit = 0;
    for (const auto& d : got) hit += gold.count(d);
    b.r_rec = gold.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(gold.size());
    b.r_pre = got.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(got.size());

    std::vector<std::string> evidence;
    for (const auto& id : P_k) {
        for (const auto& d : sample.docs) {
            if (d.id == id) evidence.push_back(d.text);
        }
    }
    auto answers = sample.answers();
    auto verdict = judge.judge(sample.question, answers, evidence);
    if (verdict) {
        b.r_ded = *verdict ? 1.0 : 0.0;
    } else {
        b.warnings.push_back("judge failed; r_ded set to 0");
    }
    auto pred = answerer.answer(sample.question, answers, evidence);
    if (pred) {
        double f1 = 0.0;
        for (const auto& a : answers) f1 = std::max(f1, text::token_f1(*pred, a));
        b.r_ans = f1;
    } else {
        b.warnings.push_back("answerer failed; r_ans set to 0");
    }
    b.r_task = hybrid_task_reward(b.r_rec, b.r_pre, b.r_ded, cfg.alpha, cfg.beta, cfg.gamma);
    return b;
}

double trajectory_return(RewardBreakdown& b, const GraphMemory& g, double lambda_rep, double lambda_fmt) {
    b.rho_rep = repetition_rate(g);
    double fmt = 0.0;
    for (double r : b.format_rewards) fmt += r;
    b.R = b.r_task - lambda_rep * b.rho_rep + lambda_fmt * fmt;
    return b.R;
}

RewardBreakdown finish(WriterState& s, const Sample& sample, FrozenReader& reader, JudgeClient& judge,
                       AnswererClient& answerer, const RewardConfig& cfg) {
    if (s.zero_reward) {
        RewardBreakdown b;
        b.zero_reward = true;
        b.format_rewards = s.format_rewards;
        b.rho_rep = repetition_rate(s.graph);
        s.flag = Flag::Stop;
        return b;
    }
    if (s.flag != Flag::Rag) throw std::logic_error("finish: state is " + to_string(s.flag) + ", not RAG");
    Evidence ev = evaluate_graph(s.graph, s.query, reader);
    RewardBreakdown b = compute_rewards(ev.doc_ids, sample, judge, answerer, cfg);
    b.format_rewards = s.format_rewards;
    trajectory_return(b, s.graph, cfg.lambda_rep, cfg.lambda_fmt);
    s.flag = Flag::Stop;
    return b;
}

}  // namespace sage
