#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "c2fs/ablation.hpp"
#include "c2fs/augment.hpp"
#include "c2fs/calibrate.hpp"
#include "c2fs/error.hpp"
#include "c2fs/model.hpp"
#include "c2fs/synth.hpp"
#include "c2fs/trainer.hpp"

namespace c2fs {

// Human-readable run configuration: `key = value` lines grouped under
// [data], [architecture], [training], [contrastive], [calibration] and
// [evaluation]. Parsing is strict: unknown sections, unknown keys and
// duplicate keys are errors, and the top-level seed is mandatory. Every field
// has a documented default; the resolved form is echoed into each run
// directory.
struct RunConfig {
    std::uint64_t seed = 0;

    // [data]
    std::string data_mode = "vector"; // vector | image
    int coarse_count = 4;
    std::vector<int> fine_per_coarse = {3, 3, 3, 3};
    std::size_t ambient_dim = 32;
    double coarse_radius = 1.0;
    double fine_radius = 0.3;
    double noise_sigma = 0.1;
    std::size_t image_channels = 3;
    std::size_t image_size = 16;
    std::size_t train_per_fine = 60;
    std::size_t test_per_fine = 40;

    // [architecture]
    std::vector<std::size_t> stage_channels = {64, 64, 48, 32};
    std::size_t embedding_dim = 16;
    std::size_t projector_hidden = 0;
    std::size_t projector_dim = 16;
    std::size_t decoder_width = 32;
    bool align_detach = false;

    // [training]
    int epochs = 30;
    std::size_t batch_size = 64;
    double initial_lr = 0.01;
    double sgd_momentum = 0.9;
    std::vector<LrScheduleEntry> lr_schedule; // empty: x0.1 at 70% and 90%
    double alpha = 1.0;
    double beta = 1.0;
    bool tie_alpha_beta = true;
    bool enable_cont = true;
    double ema_coeff = 0.999;
    int checkpoint_every = 10;
    double crop_min_area = 0.6;
    double flip_prob = 0.5;
    double jitter_prob = 0.8;
    double jitter_brightness = 0.2;
    double jitter_contrast = 0.2;
    double vector_jitter_sigma = 0.05;

    // [contrastive]
    std::size_t queue_capacity = 4096;
    double temperature = 0.2;

    // [calibration]
    int knn_k = 10;
    int round_m = 20;
    int target_n = 100;
    std::string coarse_source = "knn"; // knn | true | all
    bool mean_of_means = false;
    std::string fine_head = "logistic"; // logistic | prototype
    int logistic_steps = 500;
    double logistic_lr = 0.5;
    double logistic_l2 = 1e-3;

    // [evaluation]
    int way = -1; // -1: all-way
    int shot = 1;
    int queries_per_class = 15;
    int episodes = 1000;
    std::uint64_t eval_seed = 1;

    static RunConfig from_string(const std::string& text);
    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str());
    }

    std::string resolved_text() const;

    SynthConfig synth_config() const {
        SynthConfig s;
        s.hierarchy = LabelHierarchy::from_counts(fine_per_coarse);
        s.ambient_dim = ambient_dim;
        s.coarse_radius = coarse_radius;
        s.fine_radius = fine_radius;
        s.noise_sigma = noise_sigma;
        s.seed = seed;
        s.mode = data_mode == "image" ? SynthMode::Image : SynthMode::Vector;
        s.image_channels = image_channels;
        s.image_size = image_size;
        return s;
    }

    EncoderConfig encoder_config() const {
        EncoderConfig e;
        if (data_mode == "image")
            e.input_shape = {image_channels, image_size, image_size};
        else
            e.input_shape = {ambient_dim};
        if (stage_channels.size() != 4)
            throw ConfigError("architecture.stage_channels needs exactly 4 entries");
        for (std::size_t i = 0; i < 4; ++i) e.stage_channels[i] = stage_channels[i];
        e.embedding_dim = embedding_dim;
        e.projector_hidden = projector_hidden;
        e.projector_dim = projector_dim;
        e.decoder_width = decoder_width;
        e.align_detach = align_detach;
        return e;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.initial_lr = initial_lr;
        t.momentum = sgd_momentum;
        t.lr_schedule = lr_schedule;
        t.weights.alpha = alpha;
        t.weights.beta = beta;
        t.weights.tie_alpha_beta = tie_alpha_beta;
        t.enable_cont = enable_cont;
        t.ema_coeff = ema_coeff;
        t.queue_capacity = queue_capacity;
        t.temperature = temperature;
        t.checkpoint_every = checkpoint_every;
        t.augment.crop_min_area = crop_min_area;
        t.augment.flip_prob = flip_prob;
        t.augment.jitter_prob = jitter_prob;
        t.augment.jitter_brightness = jitter_brightness;
        t.augment.jitter_contrast = jitter_contrast;
        t.augment.vector_jitter_sigma = vector_jitter_sigma;
        t.seed = seed;
        return t;
    }

    CalibrationConfig calibration_config() const {
        CalibrationConfig c;
        c.k = knn_k;
        c.m = round_m;
        c.n = target_n;
        if (coarse_source == "knn")
            c.coarse_source = CoarseSource::KnnVote;
        else if (coarse_source == "true")
            c.coarse_source = CoarseSource::TrueLabel;
        else if (coarse_source == "all")
            c.coarse_source = CoarseSource::Unrestricted;
        else
            throw ConfigError("calibration.coarse_source must be knn, true or all");
        c.mean_of_means = mean_of_means;
        if (fine_head == "logistic")
            c.head = FineHead::Logistic;
        else if (fine_head == "prototype")
            c.head = FineHead::NearestPrototype;
        else
            throw ConfigError("calibration.head must be logistic or prototype");
        c.logistic.steps = logistic_steps;
        c.logistic.lr = logistic_lr;
        c.logistic.l2 = logistic_l2;
        return c;
    }

    BenchmarkConfig benchmark_config() const {
        BenchmarkConfig b;
        b.data = synth_config();
        b.train_per_fine = train_per_fine;
        b.test_per_fine = test_per_fine;
        b.arch = encoder_config();
        b.train = train_config();
        b.model_seed = derive_seed(seed, 0xA5C);
        b.way = way;
        b.shot = shot;
        b.queries_per_class = queries_per_class;
        b.episodes = episodes;
        b.eval_seed = eval_seed;
        b.calib = calibration_config();
        return b;
    }
};

namespace detail {

struct IniData {
    // section -> key -> value; "" is the top-level section.
    std::map<std::string, std::map<std::string, std::string>> values;
};

inline std::string ini_trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

inline IniData parse_ini(const std::string& text) {
    IniData ini;
    std::string section;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = ini_trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": malformed section header");
            section = ini_trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = ini_trim(line.substr(0, eq));
        const std::string value = ini_trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        auto& sec = ini.values[section];
        if (sec.count(key))
            throw ConfigError("config: duplicate key '" + (section.empty() ? key : section + "." + key) + "'");
        sec[key] = value;
    }
    return ini;
}

class IniReader {
public:
    explicit IniReader(IniData data) : data_(std::move(data)) {}

    bool has(const std::string& section, const std::string& key) {
        auto s = data_.values.find(section);
        return s != data_.values.end() && s->second.count(key);
    }

    std::string take(const std::string& section, const std::string& key) {
        auto& sec = data_.values[section];
        auto it = sec.find(key);
        const std::string v = it->second;
        sec.erase(it);
        return v;
    }

    template <typename F>
    void get(const std::string& section, const std::string& key, F&& apply) {
        if (has(section, key)) apply(take(section, key));
    }

    // Anything left after consumption is an unknown key.
    void reject_leftovers() {
        for (const auto& [section, keys] : data_.values)
            for (const auto& [key, value] : keys)
                throw ConfigError("config: unknown key '" +
                                  (section.empty() ? key : section + "." + key) + "'");
    }

private:
    IniData data_;
};

inline double to_double(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + s + "'");
    }
}

inline long long to_int(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (...) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + s + "'");
    }
}

inline bool to_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + s + "'");
}

inline std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        cur = ini_trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

} // namespace detail

inline RunConfig RunConfig::from_string(const std::string& text) {
    using namespace detail;
    IniReader ini(parse_ini(text));
    RunConfig c;

    if (!ini.has("", "seed")) throw ConfigError("config: top-level 'seed' is mandatory");
    c.seed = static_cast<std::uint64_t>(to_int(ini.take("", "seed"), "seed"));

    auto num = [](double& dst, const std::string& key) {
        return [&dst, key](const std::string& v) { dst = to_double(v, key); };
    };
    auto integer = [](auto& dst, const std::string& key) {
        return [&dst, key](const std::string& v) {
            dst = static_cast<std::decay_t<decltype(dst)>>(to_int(v, key));
        };
    };
    auto boolean = [](bool& dst, const std::string& key) {
        return [&dst, key](const std::string& v) { dst = to_bool(v, key); };
    };

    ini.get("data", "mode", [&](const std::string& v) {
        if (v != "vector" && v != "image")
            throw ConfigError("config: data.mode must be vector or image");
        c.data_mode = v;
    });
    ini.get("data", "coarse_count", integer(c.coarse_count, "data.coarse_count"));
    ini.get("data", "fine_per_coarse", [&](const std::string& v) {
        c.fine_per_coarse.clear();
        for (const auto& tok : split_commas(v))
            c.fine_per_coarse.push_back(static_cast<int>(to_int(tok, "data.fine_per_coarse")));
        if (c.fine_per_coarse.empty())
            throw ConfigError("config: data.fine_per_coarse must not be empty");
    });
    ini.get("data", "ambient_dim", integer(c.ambient_dim, "data.ambient_dim"));
    ini.get("data", "coarse_radius", num(c.coarse_radius, "data.coarse_radius"));
    ini.get("data", "fine_radius", num(c.fine_radius, "data.fine_radius"));
    ini.get("data", "noise_sigma", num(c.noise_sigma, "data.noise_sigma"));
    ini.get("data", "image_channels", integer(c.image_channels, "data.image_channels"));
    ini.get("data", "image_size", integer(c.image_size, "data.image_size"));
    ini.get("data", "train_per_fine", integer(c.train_per_fine, "data.train_per_fine"));
    ini.get("data", "test_per_fine", integer(c.test_per_fine, "data.test_per_fine"));

    // A single fine_per_coarse entry combined with coarse_count expands to a
    // uniform hierarchy.
    if (c.fine_per_coarse.size() == 1 && c.coarse_count > 1)
        c.fine_per_coarse.assign(static_cast<std::size_t>(c.coarse_count), c.fine_per_coarse[0]);
    if (static_cast<int>(c.fine_per_coarse.size()) != c.coarse_count)
        throw ConfigError("config: data.fine_per_coarse length must match data.coarse_count");

    ini.get("architecture", "stage_channels", [&](const std::string& v) {
        c.stage_channels.clear();
        for (const auto& tok : split_commas(v))
            c.stage_channels.push_back(
                static_cast<std::size_t>(to_int(tok, "architecture.stage_channels")));
        if (c.stage_channels.size() != 4)
            throw ConfigError("config: architecture.stage_channels needs exactly 4 entries");
    });
    ini.get("architecture", "embedding_dim", integer(c.embedding_dim, "architecture.embedding_dim"));
    ini.get("architecture", "projector_hidden",
            integer(c.projector_hidden, "architecture.projector_hidden"));
    ini.get("architecture", "projector_dim", integer(c.projector_dim, "architecture.projector_dim"));
    ini.get("architecture", "decoder_width", integer(c.decoder_width, "architecture.decoder_width"));
    ini.get("architecture", "align_detach", boolean(c.align_detach, "architecture.align_detach"));

    ini.get("training", "epochs", integer(c.epochs, "training.epochs"));
    ini.get("training", "batch_size", integer(c.batch_size, "training.batch_size"));
    ini.get("training", "initial_lr", num(c.initial_lr, "training.initial_lr"));
    ini.get("training", "momentum", num(c.sgd_momentum, "training.momentum"));
    ini.get("training", "lr_schedule", [&](const std::string& v) {
        c.lr_schedule.clear();
        for (const auto& tok : split_commas(v)) {
            const std::size_t colon = tok.find(':');
            if (colon == std::string::npos)
                throw ConfigError("config: training.lr_schedule entries are epoch:multiplier");
            LrScheduleEntry e;
            e.epoch = static_cast<int>(to_int(tok.substr(0, colon), "training.lr_schedule"));
            e.multiplier = to_double(tok.substr(colon + 1), "training.lr_schedule");
            c.lr_schedule.push_back(e);
        }
    });
    ini.get("training", "alpha", num(c.alpha, "training.alpha"));
    ini.get("training", "beta", num(c.beta, "training.beta"));
    ini.get("training", "tie_alpha_beta", boolean(c.tie_alpha_beta, "training.tie_alpha_beta"));
    ini.get("training", "enable_cont", boolean(c.enable_cont, "training.enable_cont"));
    ini.get("training", "ema_coeff", num(c.ema_coeff, "training.ema_coeff"));
    ini.get("training", "checkpoint_every", integer(c.checkpoint_every, "training.checkpoint_every"));
    ini.get("training", "crop_min_area", num(c.crop_min_area, "training.crop_min_area"));
    ini.get("training", "flip_prob", num(c.flip_prob, "training.flip_prob"));
    ini.get("training", "jitter_prob", num(c.jitter_prob, "training.jitter_prob"));
    ini.get("training", "jitter_brightness",
            num(c.jitter_brightness, "training.jitter_brightness"));
    ini.get("training", "jitter_contrast", num(c.jitter_contrast, "training.jitter_contrast"));
    ini.get("training", "vector_jitter_sigma",
            num(c.vector_jitter_sigma, "training.vector_jitter_sigma"));

    ini.get("contrastive", "queue_capacity", integer(c.queue_capacity, "contrastive.queue_capacity"));
    ini.get("contrastive", "temperature", num(c.temperature, "contrastive.temperature"));

    ini.get("calibration", "k", integer(c.knn_k, "calibration.k"));
    ini.get("calibration", "m", integer(c.round_m, "calibration.m"));
    ini.get("calibration", "n", integer(c.target_n, "calibration.n"));
    ini.get("calibration", "coarse_source", [&](const std::string& v) { c.coarse_source = v; });
    ini.get("calibration", "mean_of_means", boolean(c.mean_of_means, "calibration.mean_of_means"));
    ini.get("calibration", "head", [&](const std::string& v) { c.fine_head = v; });
    ini.get("calibration", "logistic_steps", integer(c.logistic_steps, "calibration.logistic_steps"));
    ini.get("calibration", "logistic_lr", num(c.logistic_lr, "calibration.logistic_lr"));
    ini.get("calibration", "logistic_l2", num(c.logistic_l2, "calibration.logistic_l2"));

    ini.get("evaluation", "way", integer(c.way, "evaluation.way"));
    ini.get("evaluation", "shot", integer(c.shot, "evaluation.shot"));
    ini.get("evaluation", "queries_per_class",
            integer(c.queries_per_class, "evaluation.queries_per_class"));
    ini.get("evaluation", "episodes", integer(c.episodes, "evaluation.episodes"));
    ini.get("evaluation", "eval_seed", integer(c.eval_seed, "evaluation.eval_seed"));

    ini.reject_leftovers();

    // Cross-checks that do not need a model.
    c.calibration_config();
    return c;
}

inline std::string RunConfig::resolved_text() const {
    std::ostringstream os;
    os << "seed = " << seed << "\n\n";
    os << "[data]\n";
    os << "mode = " << data_mode << "\n";
    os << "coarse_count = " << coarse_count << "\n";
    os << "fine_per_coarse = ";
    for (std::size_t i = 0; i < fine_per_coarse.size(); ++i)
        os << (i ? "," : "") << fine_per_coarse[i];
    os << "\n";
    os << "ambient_dim = " << ambient_dim << "\n";
    os << "coarse_radius = " << coarse_radius << "\n";
    os << "fine_radius = " << fine_radius << "\n";
    os << "noise_sigma = " << noise_sigma << "\n";
    os << "image_channels = " << image_channels << "\n";
    os << "image_size = " << image_size << "\n";
    os << "train_per_fine = " << train_per_fine << "\n";
    os << "test_per_fine = " << test_per_fine << "\n\n";
    os << "[architecture]\n";
    os << "stage_channels = ";
    for (std::size_t i = 0; i < stage_channels.size(); ++i)
        os << (i ? "," : "") << stage_channels[i];
    os << "\n";
    os << "embedding_dim = " << embedding_dim << "\n";
    os << "projector_hidden = " << projector_hidden << "\n";
    os << "projector_dim = " << projector_dim << "\n";
    os << "decoder_width = " << decoder_width << "\n";
    os << "align_detach = " << (align_detach ? "true" : "false") << "\n\n";
    os << "[training]\n";
    os << "epochs = " << epochs << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "initial_lr = " << initial_lr << "\n";
    os << "momentum = " << sgd_momentum << "\n";
    os << "lr_schedule = ";
    {
        // Echo the resolved (relative defaults applied) schedule.
        auto sched = train_config().resolved_schedule();
        for (std::size_t i = 0; i < sched.size(); ++i)
            os << (i ? "," : "") << sched[i].epoch << ":" << sched[i].multiplier;
    }
    os << "\n";
    os << "alpha = " << alpha << "\n";
    os << "beta = " << beta << "\n";
    os << "tie_alpha_beta = " << (tie_alpha_beta ? "true" : "false") << "\n";
    os << "enable_cont = " << (enable_cont ? "true" : "false") << "\n";
    os << "ema_coeff = " << ema_coeff << "\n";
    os << "checkpoint_every = " << checkpoint_every << "\n";
    os << "crop_min_area = " << crop_min_area << "\n";
    os << "flip_prob = " << flip_prob << "\n";
    os << "jitter_prob = " << jitter_prob << "\n";
    os << "jitter_brightness = " << jitter_brightness << "\n";
    os << "jitter_contrast = " << jitter_contrast << "\n";
    os << "vector_jitter_sigma = " << vector_jitter_sigma << "\n\n";
    os << "[contrastive]\n";
    os << "queue_capacity = " << queue_capacity << "\n";
    os << "temperature = " << temperature << "\n\n";
    os << "[calibration]\n";
    os << "k = " << knn_k << "\n";
    os << "m = " << round_m << "\n";
    os << "n = " << target_n << "\n";
    os << "coarse_source = " << coarse_source << "\n";
    os << "mean_of_means = " << (mean_of_means ? "true" : "false") << "\n";
    os << "head = " << fine_head << "\n";
    os << "logistic_steps = " << logistic_steps << "\n";
    os << "logistic_lr = " << logistic_lr << "\n";
    os << "logistic_l2 = " << logistic_l2 << "\n\n";
    os << "[evaluation]\n";
    os << "way = " << way << "\n";
    os << "shot = " << shot << "\n";
    os << "queries_per_class = " << queries_per_class << "\n";
    os << "episodes = " << episodes << "\n";
    os << "eval_seed = " << eval_seed << "\n";
    return os.str();
}

} // namespace c2fs
