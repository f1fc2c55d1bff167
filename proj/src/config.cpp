#include "fedrm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace fedrm {

using nlohmann::ordered_json;

namespace {

// Reads fields from one JSON object, remembering which keys were consumed so
// that anything left over can be rejected.
class ObjectReader {
public:
    ObjectReader(const ordered_json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return obj_.contains(key); }

    const ordered_json* take(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        const ordered_json* v = take(key);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) throw ConfigError(field(key), "expected true or false");
                out = v->get<bool>();
            } else if constexpr (std::is_integral_v<T>) {
                if (!v->is_number_integer()) throw ConfigError(field(key), "expected an integer");
                if (v->is_number_unsigned()) {
                    out = static_cast<T>(v->get<std::uint64_t>());
                } else {
                    const auto s = v->get<std::int64_t>();
                    if (s < 0) throw ConfigError(field(key), "must not be negative");
                    out = static_cast<T>(s);
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v->is_number()) throw ConfigError(field(key), "expected a number");
                out = v->get<T>();
            } else {
                if (!v->is_string()) throw ConfigError(field(key), "expected a string");
                out = v->get<std::string>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(field(key), e.what());
        }
    }

    ObjectReader child(const std::string& key) {
        const ordered_json* v = take(key);
        static const ordered_json empty = ordered_json::object();
        return ObjectReader(v ? *v : empty, field(key));
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
        }
    }

private:
    const ordered_json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

Task parse_task(const std::string& s) {
    if (s == "mnist") return Task::mnist;
    if (s == "cifar10") return Task::cifar10;
    if (s == "kws") return Task::kws;
    if (s == "synthetic") return Task::synthetic;
    throw ConfigError("task", "must be one of mnist, cifar10, kws, synthetic (got '" + s + "')");
}

ArchId default_arch(Task task) {
    switch (task) {
        case Task::cifar10: return ArchId::cifar_cnn;
        case Task::kws: return ArchId::kws_cnn;
        default: return ArchId::mnist_mlp;
    }
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

Dataset class_subset(const Dataset& data, std::size_t count, std::uint64_t seed, std::size_t classes, Split split) {
    if (count == 0 || count >= data.size()) return data;
    Rng rng = Rng::derive(seed, StreamTag::data_split, 1);
    auto held = stratified_holdout(data, count, rng, classes).first;
    return data.subset(held, split);
}

}  // namespace

std::string_view to_string(Task task) {
    switch (task) {
        case Task::mnist: return "mnist";
        case Task::cifar10: return "cifar10";
        case Task::kws: return "kws";
        case Task::synthetic: return "synthetic";
    }
    return "unknown";
}

ExperimentConfig parse_config(const ordered_json& doc) {
    ExperimentConfig c;
    ObjectReader root(doc, "");

    if (!root.has("task")) throw ConfigError("task", "is required");
    std::string task;
    root.get("task", task);
    c.task = parse_task(task);

    if (!root.has("seed")) throw ConfigError("seed", "is required (no implicit entropy)");
    root.get("seed", c.seed);
    c.fed.seed = c.seed;

    c.fed.arch = default_arch(c.task);
    if (c.task == Task::kws) c.fed.tuner.axes = TunerConfig::kws_axes();
    if (root.has("arch")) {
        std::string arch;
        root.get("arch", arch);
        try {
            c.fed.arch = parse_arch_id(arch);
        } catch (const Error& e) {
            throw ConfigError("arch", e.what());
        }
    }

    {
        ObjectReader d = root.child("data");
        d.get("dir", c.data.dir);
        d.get("train_file", c.data.train_file);
        d.get("test_file", c.data.test_file);
        d.get("train_subset", c.data.train_subset);
        d.get("test_subset", c.data.test_subset);
        d.finish();
    }
    {
        ObjectReader s = root.child("synthetic");
        s.get("classes", c.synthetic.classes);
        s.get("samples_per_class", c.synthetic.samples_per_class);
        s.get("test_per_class", c.synthetic.test_per_class);
        s.get("separation", c.synthetic.separation);
        s.get("spread", c.synthetic.spread);
        s.finish();
        if (c.synthetic.classes < 2) throw ConfigError("synthetic.classes", "needs at least 2 classes");
        if (c.synthetic.samples_per_class == 0) throw ConfigError("synthetic.samples_per_class", "must be positive");
    }

    std::string part = "iid";
    root.get("partition", part);
    if (part == "iid") {
        c.partition = PartitionMode::iid;
    } else if (part == "non_iid") {
        c.partition = PartitionMode::non_iid;
    } else {
        throw ConfigError("partition", "must be iid or non_iid");
    }
    root.get("validation_size", c.validation_size);
    if (c.validation_size == 0) throw ConfigError("validation_size", "must be positive");

    {
        ObjectReader a = root.child("algorithm");
        a.get("use_rm", c.fed.loss.use_matching);
        a.get("use_ah", c.fed.use_ah);
        a.get("use_wd", c.fed.loss.use_wd);
        a.get("use_er", c.fed.loss.use_er);
        std::string agg = "literal";
        a.get("aggregation", agg);
        if (agg == "literal") {
            c.fed.aggregation = AggregationMode::literal;
        } else if (agg == "renormalized") {
            c.fed.aggregation = AggregationMode::renormalized;
        } else {
            throw ConfigError("algorithm.aggregation", "must be literal or renormalized");
        }
        a.finish();
        if (c.fed.loss.use_matching && c.fed.loss.use_wd) {
            throw ConfigError("algorithm.use_wd", "representation matching and weight divergence are alternatives");
        }
    }

    root.get("K", c.fed.clients);
    root.get("C", c.fed.fraction);
    root.get("T", c.fed.rounds);
    root.get("batch_size", c.fed.batch_size);
    root.get("eval_every", c.fed.eval_every);
    root.get("repeats", c.repeats);
    root.get("threads", c.fed.threads);
    root.get("record_timing", c.record_timing);
    if (c.fed.clients == 0) throw ConfigError("K", "must be positive");
    if (!(c.fed.fraction > 0.0 && c.fed.fraction <= 1.0)) throw ConfigError("C", "must lie in (0, 1]");
    if (std::llround(c.fed.fraction * static_cast<double>(c.fed.clients)) < 1) {
        throw ConfigError("C", "C * K must select at least one client");
    }
    if (c.fed.batch_size == 0) throw ConfigError("batch_size", "must be positive");
    if (c.fed.eval_every == 0) throw ConfigError("eval_every", "must be positive");
    if (c.repeats == 0) throw ConfigError("repeats", "must be positive");
    if (c.fed.threads == 0) throw ConfigError("threads", "must be positive");
    if (c.partition == PartitionMode::non_iid && c.fed.clients != c.num_classes()) {
        throw ConfigError("K", "non_iid partition needs one client per class (K = " + std::to_string(c.num_classes()) +
                                   ")");
    }

    {
        ObjectReader t = root.child("tuner");
        if (const ordered_json* grid = t.take("grid")) {
            if (!grid->is_array() || grid->empty()) throw ConfigError("tuner.grid", "expected a nonempty array");
            std::vector<GridAxis> axes;
            for (std::size_t i = 0; i < grid->size(); ++i) {
                ObjectReader ax((*grid)[i], "tuner.grid[" + std::to_string(i) + "]");
                std::string name;
                ax.get("name", name);
                const ordered_json* values = ax.take("values");
                ax.finish();
                if (name.empty()) throw ConfigError(ax.field("name"), "is required");
                if (!values || !values->is_array() || values->empty()) {
                    throw ConfigError(ax.field("values"), "expected a nonempty array of numbers");
                }
                std::vector<double> raw;
                for (const auto& v : *values) {
                    if (!v.is_number()) throw ConfigError(ax.field("values"), "expected numbers");
                    raw.push_back(v.get<double>());
                }
                try {
                    axes.emplace_back(name, raw);
                } catch (const Error& e) {
                    throw ConfigError(ax.field("values"), e.what());
                }
            }
            c.fed.tuner.axes = std::move(axes);
        }
        t.get("Z", c.fed.tuner.window_radius);
        t.get("eta_h", c.fed.tuner.eta_h);
        t.get("init_std", c.fed.tuner.init_std);
        t.get("freeze_precision", c.fed.tuner.freeze_precision);
        std::string sign = "ascent";
        t.get("update_sign", sign);
        if (sign == "ascent") {
            c.fed.tuner.update_sign = 1.0;
        } else if (sign == "descent") {
            c.fed.tuner.update_sign = -1.0;
        } else {
            throw ConfigError("tuner.update_sign", "must be ascent or descent");
        }
        t.finish();
        if (!(c.fed.tuner.init_std > 0.0)) throw ConfigError("tuner.init_std", "must be positive");
        if (c.fed.tuner.eta_h < 0.0) throw ConfigError("tuner.eta_h", "must not be negative");
    }
    {
        ObjectReader s = root.child("schedule");
        s.get("initial_lr", c.fed.schedule.initial_lr);
        s.get("decay_factor", c.fed.schedule.decay_factor);
        s.get("decay_every", c.fed.schedule.decay_every);
        s.get("iterations", c.fed.schedule.iterations);
        s.finish();
        if (!(c.fed.schedule.initial_lr >= 0.0)) throw ConfigError("schedule.initial_lr", "must not be negative");
        if (!(c.fed.schedule.decay_factor > 0.0)) throw ConfigError("schedule.decay_factor", "must be positive");
        if (c.fed.schedule.iterations == 0) throw ConfigError("schedule.iterations", "must be positive");
    }
    {
        ObjectReader l = root.child("loss");
        l.get("wd_coeff", c.fed.loss.wd_coeff);
        l.get("h_min", c.fed.loss.h_min);
        l.get("matching_coeff", c.fed.loss.matching_coeff);
        l.get("match_input", c.fed.match_input);
        std::string reduction = "sum";
        l.get("matching_reduction", reduction);
        if (reduction == "sum") {
            c.fed.loss.matching_reduction = MatchingReduction::sum;
        } else if (reduction == "mean") {
            c.fed.loss.matching_reduction = MatchingReduction::mean;
        } else {
            throw ConfigError("loss.matching_reduction", "must be sum or mean");
        }
        l.finish();
        if (c.fed.loss.wd_coeff < 0.0) throw ConfigError("loss.wd_coeff", "must not be negative");
        if (c.fed.loss.h_min < 0.0) throw ConfigError("loss.h_min", "must not be negative");
        if (c.fed.loss.matching_coeff < 0.0) throw ConfigError("loss.matching_coeff", "must not be negative");
    }

    std::string out;
    root.get("output_dir", out);
    c.output_dir = out.empty() ? std::filesystem::path("runs") / (std::string(to_string(c.task)) + "-seed" +
                                                                   std::to_string(c.seed))
                               : std::filesystem::path(out);
    root.finish();

    switch (c.task) {
        case Task::mnist:
        case Task::cifar10:
            if (c.data.dir.empty()) throw ConfigError("data.dir", "is required for task " + std::string(to_string(c.task)));
            break;
        case Task::kws:
            if (c.data.train_file.empty()) throw ConfigError("data.train_file", "is required for task kws");
            if (c.data.test_file.empty()) throw ConfigError("data.test_file", "is required for task kws");
            break;
        case Task::synthetic: break;
    }
    return c;
}

ExperimentConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open " + path.string());
    ordered_json doc;
    try {
        doc = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("<file>", path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

ordered_json to_json(const ExperimentConfig& c) {
    ordered_json grid = ordered_json::array();
    for (const auto& axis : c.fed.tuner.axes) grid.push_back({{"name", axis.name}, {"values", axis.values}});
    return ordered_json{
        {"task", std::string(to_string(c.task))},
        {"seed", c.seed},
        {"arch", std::string(to_string(c.fed.arch))},
        {"data",
         {{"dir", c.data.dir},
          {"train_file", c.data.train_file},
          {"test_file", c.data.test_file},
          {"train_subset", c.data.train_subset},
          {"test_subset", c.data.test_subset}}},
        {"synthetic",
         {{"classes", c.synthetic.classes},
          {"samples_per_class", c.synthetic.samples_per_class},
          {"test_per_class", c.synthetic.test_per_class},
          {"separation", c.synthetic.separation},
          {"spread", c.synthetic.spread}}},
        {"partition", std::string(to_string(c.partition))},
        {"validation_size", c.validation_size},
        {"algorithm",
         {{"use_rm", c.fed.loss.use_matching},
          {"use_ah", c.fed.use_ah},
          {"use_wd", c.fed.loss.use_wd},
          {"use_er", c.fed.loss.use_er},
          {"aggregation", std::string(to_string(c.fed.aggregation))}}},
        {"K", c.fed.clients},
        {"C", c.fed.fraction},
        {"T", c.fed.rounds},
        {"batch_size", c.fed.batch_size},
        {"tuner",
         {{"grid", grid},
          {"Z", c.fed.tuner.window_radius},
          {"eta_h", c.fed.tuner.eta_h},
          {"init_std", c.fed.tuner.init_std},
          {"freeze_precision", c.fed.tuner.freeze_precision},
          {"update_sign", c.fed.tuner.update_sign > 0 ? "ascent" : "descent"}}},
        {"schedule",
         {{"initial_lr", c.fed.schedule.initial_lr},
          {"decay_factor", c.fed.schedule.decay_factor},
          {"decay_every", c.fed.schedule.decay_every},
          {"iterations", c.fed.schedule.iterations}}},
        {"loss",
         {{"wd_coeff", c.fed.loss.wd_coeff},
          {"h_min", c.fed.loss.h_min},
          {"matching_coeff", c.fed.loss.matching_coeff},
          {"match_input", c.fed.match_input},
          {"matching_reduction", std::string(to_string(c.fed.loss.matching_reduction))}}},
        {"eval_every", c.fed.eval_every},
        {"repeats", c.repeats},
        {"threads", c.fed.threads},
        {"record_timing", c.record_timing},
        {"output_dir", c.output_dir.generic_string()},
    };
}

std::string config_hash(const ExperimentConfig& config) {
    ordered_json j = to_json(config);
    for (const char* key : {"seed", "output_dir", "repeats", "threads", "record_timing"}) j.erase(key);
    std::ostringstream out;
    out << std::hex;
    out.width(16);
    out.fill('0');
    out << fnv1a(j.dump());
    return out.str();
}

std::string config_label(const ExperimentConfig& c) {
    std::string algo = "FA";
    if (c.fed.loss.use_wd) algo += "+WD";
    if (c.fed.loss.use_matching) algo += "+RM";
    if (c.fed.use_ah) algo += "+AH";
    std::ostringstream out;
    out << to_string(c.task) << ' ' << to_string(c.partition) << " C=" << c.fed.fraction << ' ' << algo;
    return out.str();
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
    if (config.output_dir.is_absolute()) return config.output_dir;
    if (const char* root = std::getenv("FEDRM_OUTPUT_ROOT"); root && *root) {
        return std::filesystem::path(root) / config.output_dir;
    }
    return config.output_dir;
}

FederatedData load_task_data(const ExperimentConfig& config) {
    const std::size_t classes = config.num_classes();
    Dataset train;
    Dataset test;
    switch (config.task) {
        case Task::mnist: std::tie(train, test) = load_mnist(config.data.dir); break;
        case Task::cifar10: std::tie(train, test) = load_cifar10(config.data.dir); break;
        case Task::kws:
            train = load_features(config.data.train_file, Split::train);
            test = load_features(config.data.test_file, Split::test);
            break;
        case Task::synthetic: {
            // Train and test share class means: generate them together, then split.
            const Shape shape = build_arch(config.fed.arch).graph.input_shape;
            SyntheticSpec spec{classes, config.synthetic.samples_per_class + config.synthetic.test_per_class, shape,
                               config.synthetic.separation, config.synthetic.spread};
            Rng rng = Rng::derive(config.seed, StreamTag::synthetic);
            const Dataset all = make_synthetic(spec, rng);
            std::vector<std::size_t> train_idx, test_idx;
            std::vector<std::size_t> seen(classes, 0);
            for (std::size_t i = 0; i < all.size(); ++i) {
                const auto y = static_cast<std::size_t>(all.labels[i]);
                (seen[y]++ < config.synthetic.samples_per_class ? train_idx : test_idx).push_back(i);
            }
            train = all.subset(train_idx, Split::train);
            test = all.subset(test_idx, Split::test);
            break;
        }
    }
    const Shape expected = build_arch(config.fed.arch).graph.input_shape;
    if (train.sample_shape() != expected) {
        throw ConfigError("arch", std::string(to_string(config.fed.arch)) + " expects samples of shape " +
                                      shape_str(expected) + ", data has " + shape_str(train.sample_shape()));
    }
    train = class_subset(train, config.data.train_subset, config.seed, classes, Split::train);
    test = class_subset(test, config.data.test_subset, config.seed, classes, Split::test);
    return prepare_federated_data(train, std::move(test), config.fed.clients, config.partition,
                                  config.validation_size, config.seed, classes);
}

}  // namespace fedrm
