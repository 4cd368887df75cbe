#include "sdvae/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "sdvae/errors.hpp"

namespace sdvae {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError(std::string(key), "expected a number, got '" + std::string(v) + "'");
    return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError(std::string(key), "expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError(std::string(key), "expected 0 or 1, got '" + std::string(v) + "'");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
    std::vector<std::size_t> out;
    while (!v.empty()) {
        const auto comma = v.find(',');
        out.push_back(parse_uint(key, trim(v.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    if (out.empty()) throw ConfigError(std::string(key), "expected a comma-separated list");
    return out;
}

[[noreturn]] void bad_choice(std::string_view key, std::string_view v, const char* choices) {
    throw ConfigError(std::string(key), "expected one of " + std::string(choices) + ", got '" + std::string(v) + "'");
}

std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string fmt_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "variant",       "iaf",          "lambda",       "mu",           "beta1",          "beta2",
        "flow_length",   "dim_u",        "classes",      "trunk_hidden", "decoder_hidden", "dropout",
        "likelihood",    "v_decode",     "baseline",     "labeled_advantage", "labeled",   "batch_size",
        "epochs",        "learning_rate", "adam_beta1",  "adam_beta2",   "adam_epsilon",   "clip_grad_norm",
        "seed",          "record_wallclock", "dataset",  "binarize",     "syn_classes",    "syn_side",
        "syn_corruption", "syn_train",   "syn_test",     "syn_seed",     "syn_min_distance",
    };
    return keys;
}

void set_config_value(TrainingConfig& c, std::string_view key, std::string_view raw) {
    const std::string_view v = trim(raw);
    if (key == "variant") {
        if (v == "sdvae1") c.variant = Variant::Sdvae1;
        else if (v == "sdvae2") c.variant = Variant::Sdvae2;
        else bad_choice(key, v, "{sdvae1, sdvae2}");
    } else if (key == "iaf") c.iaf = parse_bool(key, v);
    else if (key == "lambda") c.lambda = parse_double(key, v);
    else if (key == "mu") c.mu = parse_double(key, v);
    else if (key == "beta1") c.beta1 = parse_double(key, v);
    else if (key == "beta2") c.beta2 = parse_double(key, v);
    else if (key == "flow_length") c.flow_length = parse_uint(key, v);
    else if (key == "dim_u") c.dim_u = parse_uint(key, v);
    else if (key == "classes") c.classes = parse_uint(key, v);
    else if (key == "trunk_hidden") c.trunk_hidden = parse_list(key, v);
    else if (key == "decoder_hidden") c.decoder_hidden = parse_uint(key, v);
    else if (key == "dropout") c.dropout = parse_double(key, v);
    else if (key == "likelihood") {
        if (v == "bernoulli") c.likelihood = Likelihood::Bernoulli;
        else if (v == "gaussian") c.likelihood = Likelihood::Gaussian;
        else bad_choice(key, v, "{bernoulli, gaussian}");
    } else if (key == "v_decode") {
        if (v == "auto") c.v_decode.reset();
        else if (v == "expected") c.v_decode = VDecode::Expected;
        else if (v == "sample") c.v_decode = VDecode::Sample;
        else bad_choice(key, v, "{auto, expected, sample}");
    } else if (key == "baseline") {
        if (v == "vmean") c.baseline = BaselineKind::VMean;
        else if (v == "batch_reward") c.baseline = BaselineKind::BatchReward;
        else bad_choice(key, v, "{vmean, batch_reward}");
    } else if (key == "labeled_advantage") {
        if (v == "magnitude") c.labeled_advantage = LabeledAdvantage::Magnitude;
        else if (v == "signed") c.labeled_advantage = LabeledAdvantage::Signed;
        else bad_choice(key, v, "{magnitude, signed}");
    } else if (key == "labeled") c.labeled_count = parse_uint(key, v);
    else if (key == "batch_size") c.batch_size = parse_uint(key, v);
    else if (key == "epochs") c.epochs = parse_uint(key, v);
    else if (key == "learning_rate" || key == "lr") c.learning_rate = parse_double(key, v);
    else if (key == "adam_beta1") c.adam_beta1 = parse_double(key, v);
    else if (key == "adam_beta2") c.adam_beta2 = parse_double(key, v);
    else if (key == "adam_epsilon") c.adam_epsilon = parse_double(key, v);
    else if (key == "clip_grad_norm") c.clip_grad_norm = parse_double(key, v);
    else if (key == "seed") c.seed = parse_uint(key, v);
    else if (key == "record_wallclock") c.record_wallclock = parse_bool(key, v);
    else if (key == "dataset") {
        if (v.empty()) throw ConfigError("dataset", "must not be empty");
        c.dataset = std::string(v);
    } else if (key == "binarize") c.binarize_threshold = parse_double(key, v);
    else if (key == "syn_classes") c.synthetic.classes = parse_uint(key, v);
    else if (key == "syn_side") c.synthetic.side = parse_uint(key, v);
    else if (key == "syn_corruption") c.synthetic.corruption = parse_double(key, v);
    else if (key == "syn_train") c.synthetic.train_count = parse_uint(key, v);
    else if (key == "syn_test") c.synthetic.test_count = parse_uint(key, v);
    else if (key == "syn_seed") c.synthetic.seed = parse_uint(key, v);
    else if (key == "syn_min_distance") c.synthetic.min_template_distance = parse_uint(key, v);
    else throw ConfigError(std::string(key), "unknown configuration key");
}

TrainingConfig parse_config(std::string_view text, TrainingConfig base) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = trim(text.substr(0, nl));
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
        set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return base;
}

TrainingConfig load_config(const std::filesystem::path& path, TrainingConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

std::string config_to_text(const TrainingConfig& c) {
    auto choice = [](bool first, const char* a, const char* b) { return std::string(first ? a : b); };
    std::string v_decode = "auto";
    if (c.v_decode) v_decode = *c.v_decode == VDecode::Expected ? "expected" : "sample";
    std::ostringstream out;
    out << "variant = " << choice(c.variant == Variant::Sdvae1, "sdvae1", "sdvae2") << '\n'
        << "iaf = " << (c.iaf ? 1 : 0) << '\n'
        << "lambda = " << fmt_double(c.lambda) << '\n'
        << "mu = " << fmt_double(c.mu) << '\n'
        << "beta1 = " << fmt_double(c.beta1) << '\n'
        << "beta2 = " << fmt_double(c.beta2) << '\n'
        << "flow_length = " << c.flow_length << '\n'
        << "dim_u = " << c.dim_u << '\n'
        << "classes = " << c.classes << '\n'
        << "trunk_hidden = " << fmt_list(c.trunk_hidden) << '\n'
        << "decoder_hidden = " << c.decoder_hidden << '\n'
        << "dropout = " << fmt_double(c.dropout) << '\n'
        << "likelihood = " << choice(c.likelihood == Likelihood::Bernoulli, "bernoulli", "gaussian") << '\n'
        << "v_decode = " << v_decode << '\n'
        << "baseline = " << choice(c.baseline == BaselineKind::VMean, "vmean", "batch_reward") << '\n'
        << "labeled_advantage = " << choice(c.labeled_advantage == LabeledAdvantage::Magnitude, "magnitude", "signed")
        << '\n'
        << "labeled = " << c.labeled_count << '\n'
        << "batch_size = " << c.batch_size << '\n'
        << "epochs = " << c.epochs << '\n'
        << "learning_rate = " << fmt_double(c.learning_rate) << '\n'
        << "adam_beta1 = " << fmt_double(c.adam_beta1) << '\n'
        << "adam_beta2 = " << fmt_double(c.adam_beta2) << '\n'
        << "adam_epsilon = " << fmt_double(c.adam_epsilon) << '\n'
        << "clip_grad_norm = " << fmt_double(c.clip_grad_norm) << '\n'
        << "seed = " << c.seed << '\n'
        << "record_wallclock = " << (c.record_wallclock ? 1 : 0) << '\n'
        << "dataset = " << c.dataset << '\n'
        << "binarize = " << fmt_double(c.binarize_threshold) << '\n'
        << "syn_classes = " << c.synthetic.classes << '\n'
        << "syn_side = " << c.synthetic.side << '\n'
        << "syn_corruption = " << fmt_double(c.synthetic.corruption) << '\n'
        << "syn_train = " << c.synthetic.train_count << '\n'
        << "syn_test = " << c.synthetic.test_count << '\n'
        << "syn_seed = " << c.synthetic.seed << '\n'
        << "syn_min_distance = " << c.synthetic.min_template_distance << '\n';
    return out.str();
}

}  // namespace sdvae
