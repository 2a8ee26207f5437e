// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#include "splat/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace splat {
namespace {

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

double to_double(const std::string &key, const std::string &v) {
    double out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
}

long long to_int(const std::string &key, const std::string &v) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string &key, const std::string &v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no" || v == "off") {
        return false;
    }
    throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

using Setter = std::function<void(TrainConfig &, const std::string &, const std::string &)>;

template <typename T> Setter real(T TrainConfig::*group, double T::*field) {
    return [=](TrainConfig &c, const std::string &k, const std::string &v) { (c.*group).*field = to_double(k, v); };
}

const std::map<std::string, Setter> &setters() {
    static const std::map<std::string, Setter> table = {
        {"iterations", [](TrainConfig &c, auto &k, auto &v) { c.iterations = static_cast<int>(to_int(k, v)); }},
        {"seed", [](TrainConfig &c, auto &k, auto &v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
        {"threads", [](TrainConfig &c, auto &k, auto &v) { c.threads = static_cast<int>(to_int(k, v)); }},
        {"batch-size", [](TrainConfig &c, auto &k, auto &v) { c.batch_size = static_cast<int>(to_int(k, v)); }},
        {"sh-degree", [](TrainConfig &c, auto &k, auto &v) { c.sh_degree = static_cast<int>(to_int(k, v)); }},
        {"sh-warmup-every",
         [](TrainConfig &c, auto &k, auto &v) { c.sh_warmup_every = static_cast<int>(to_int(k, v)); }},
        {"lambda-ssim", [](TrainConfig &c, auto &k, auto &v) { c.lambda_ssim = to_double(k, v); }},
        {"blur", [](TrainConfig &c, auto &k, auto &v) { c.blur = to_double(k, v); }},
        {"aa", [](TrainConfig &c, auto &k, auto &v) {
             c.mode = to_bool(k, v) ? RasterMode::Antialiased : RasterMode::Classic;
         }},
        {"absgrad", [](TrainConfig &c, auto &k, auto &v) { c.absgrad = to_bool(k, v); }},
        {"pose-opt", [](TrainConfig &c, auto &k, auto &v) { c.pose_opt = to_bool(k, v); }},
        {"strategy", [](TrainConfig &c, auto &k, auto &v) {
             if (v == "adc") {
                 c.strategy = StrategyKind::Adc;
             } else if (v == "mcmc") {
                 c.strategy = StrategyKind::Mcmc;
             } else if (v == "none") {
                 c.strategy = StrategyKind::None;
             } else {
                 throw ConfigError("config: '" + k + "' expects adc, mcmc or none, got '" + v + "'");
             }
         }},
        {"background", [](TrainConfig &c, auto &k, auto &v) {
             c.background.clear();
             std::istringstream ss(v);
             std::string part;
             while (std::getline(ss, part, ',')) {
                 c.background.push_back(to_double(k, trim(part)));
             }
         }},
        {"lr-means", real(&TrainConfig::lr, &LearningRates::means)},
        {"lr-means-final-factor", real(&TrainConfig::lr, &LearningRates::means_final_factor)},
        {"lr-scales", real(&TrainConfig::lr, &LearningRates::scales)},
        {"lr-quats", real(&TrainConfig::lr, &LearningRates::quats)},
        {"lr-opacities", real(&TrainConfig::lr, &LearningRates::opacities)},
        {"lr-sh", real(&TrainConfig::lr, &LearningRates::sh)},
        {"lr-sh-rest-factor", real(&TrainConfig::lr, &LearningRates::sh_rest_factor)},
        {"lr-pose", real(&TrainConfig::lr, &LearningRates::pose)},
        {"grow-grad2d", real(&TrainConfig::adc, &AdcConfig::grow_grad2d)},
        {"grow-scale3d", real(&TrainConfig::adc, &AdcConfig::grow_scale3d)},
        {"prune-opa", real(&TrainConfig::adc, &AdcConfig::prune_opa)},
        {"refine-start",
         [](TrainConfig &c, auto &k, auto &v) { c.adc.refine_start = c.mcmc.refine_start = static_cast<int>(to_int(k, v)); }},
        {"refine-stop",
         [](TrainConfig &c, auto &k, auto &v) { c.adc.refine_stop = c.mcmc.refine_stop = static_cast<int>(to_int(k, v)); }},
        {"refine-every",
         [](TrainConfig &c, auto &k, auto &v) { c.adc.refine_every = c.mcmc.refine_every = static_cast<int>(to_int(k, v)); }},
        {"reset-every", [](TrainConfig &c, auto &k, auto &v) { c.adc.reset_every = static_cast<int>(to_int(k, v)); }},
        {"cap-max", [](TrainConfig &c, auto &k, auto &v) { c.mcmc.cap_max = static_cast<Index>(to_int(k, v)); }},
        {"noise-lr", real(&TrainConfig::mcmc, &McmcConfig::noise_lr)},
        {"min-opacity", real(&TrainConfig::mcmc, &McmcConfig::min_opacity)},
    };
    return table;
}

} // namespace

std::map<std::string, std::string> parse_key_values(const std::string &text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    for (int number = 1; std::getline(in, line); ++number) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(number) + ": expected key=value");
        }
        std::string key = trim(line.substr(0, eq));
        if (key.starts_with("--")) {
            key = key.substr(2);
        }
        if (key.empty()) {
            throw ConfigError("config: line " + std::to_string(number) + ": empty key");
        }
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

void apply_config(const std::map<std::string, std::string> &entries, TrainConfig &config) {
    const auto &table = setters();
    for (const auto &[key, value] : entries) {
        const auto it = table.find(key);
        if (it == table.end()) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
        it->second(config, key, value);
    }
}

TrainConfig load_train_config(const std::filesystem::path &path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    apply_config(parse_key_values(ss.str()), base);
    return base;
}

} // namespace splat
