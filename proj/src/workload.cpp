#include "loraserve/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "loraserve/errors.hpp"

namespace loraserve {

std::vector<double> power_law_pmf(int n, double alpha) {
    if (n < 1) {
        throw ConfigError("power-law pmf needs n >= 1");
    }
    if (alpha < 0.0) {
        throw ConfigError("power-law exponent must be >= 0");
    }
    std::vector<double> pmf(static_cast<size_t>(n));
    double              norm = 0.0;
    for (int i = 0; i < n; ++i) {
        pmf[size_t(i)] = std::pow(double(i + 1), -alpha);
        norm += pmf[size_t(i)];
    }
    for (double & p : pmf) {
        p /= norm;
    }
    return pmf;
}

std::vector<double> sample_intervals(double rate, double cv, int count, uint64_t seed) {
    if (rate <= 0.0 || cv <= 0.0) {
        throw ConfigError("rate and cv must be positive");
    }
    const double shape = 1.0 / (cv * cv);
    const double scale = (cv * cv) / rate;

    Rng                 rng(seed);
    std::vector<double> intervals(static_cast<size_t>(count));
    for (double & v : intervals) {
        v = rng.gamma(shape, scale);
    }
    return intervals;
}

static int usable_vocab(int vocab_size) {
    // top token stays out of prompts (eos by convention)
    return std::max(1, vocab_size - 1);
}

static int topic_span(int vocab_size, int adapter_count) {
    return std::max(1, usable_vocab(vocab_size) / std::max(1, adapter_count));
}

int topic_token(int adapter_id, int vocab_size, int adapter_count) {
    const int span = topic_span(vocab_size, adapter_count);
    return (adapter_id * span) % usable_vocab(vocab_size);
}

std::vector<int> topic_vocab(int adapter_id, int vocab_size, int adapter_count) {
    const int        span = topic_span(vocab_size, adapter_count);
    const int        base = (adapter_id * span) % usable_vocab(vocab_size);
    std::vector<int> vocab(static_cast<size_t>(span));
    for (int i = 0; i < span; ++i) {
        vocab[size_t(i)] = (base + i) % usable_vocab(vocab_size);
    }
    return vocab;
}

std::vector<int> make_topic_prompt(int adapter_id, int length, int vocab_size, int adapter_count, Rng & rng) {
    if (length < 1) {
        throw InputError("prompt length must be >= 1");
    }
    const std::vector<int> vocab = topic_vocab(adapter_id, vocab_size, adapter_count);
    std::vector<int>       prompt;
    prompt.reserve(size_t(length));
    prompt.push_back(topic_token(adapter_id, vocab_size, adapter_count));
    for (int i = 1; i < length; ++i) {
        prompt.push_back(vocab[size_t(rng.uniform_int(0, int(vocab.size()) - 1))]);
    }
    return prompt;
}

static double quantize_ms(double ms) {
    // 1 microsecond grid keeps the text round-trip exact
    return std::round(ms * 1000.0) / 1000.0;
}

std::vector<TraceEvent> generate_trace(const WorkloadConfig & config) {
    if (config.n < 1) {
        throw ConfigError("trace needs n >= 1");
    }
    if (config.input_min < 1 || config.input_min > config.input_max || config.output_min < 1 ||
        config.output_max < config.output_min) {
        throw ConfigError("bad prompt/output length bounds");
    }
    if (config.rate <= 0.0 || config.cv <= 0.0 || config.duration_s < 0.0) {
        throw ConfigError("bad rate/cv/duration");
    }
    if (config.explicit_fraction < 0.0 || config.explicit_fraction > 1.0) {
        throw ConfigError("explicit_fraction must be in [0,1]");
    }
    if (config.vocab_size < 2) {
        throw ConfigError("vocab_size must be >= 2");
    }

    // independent streams so sweeps that vary one knob keep the others' draws
    Rng arrivals(derive_seed(config.seed, 0));
    Rng adapters(derive_seed(config.seed, 1));
    Rng lengths(derive_seed(config.seed, 2));
    Rng fillers(derive_seed(config.seed, 3));
    Rng explicit_coin(derive_seed(config.seed, 4));

    const std::vector<double> pmf = power_law_pmf(config.n, config.alpha);
    std::vector<double>       cdf(pmf.size());
    double                    acc = 0.0;
    for (size_t i = 0; i < pmf.size(); ++i) {
        acc += pmf[i];
        cdf[i] = acc;
    }
    cdf.back() = 1.0;

    const double shape = 1.0 / (config.cv * config.cv);
    const double scale = (config.cv * config.cv) / config.rate;

    std::vector<TraceEvent> trace;
    double                  t_s = 0.0;
    for (;;) {
        t_s += arrivals.gamma(shape, scale);
        if (t_s > config.duration_s) {
            break;
        }
        TraceEvent ev;
        ev.arrival_ms = quantize_ms(t_s * 1000.0);

        const double u  = adapters.uniform();
        const auto   it = std::lower_bound(cdf.begin(), cdf.end(), u);
        ev.intended_adapter = int(it - cdf.begin());

        const int prompt_len = lengths.uniform_int(config.input_min, config.input_max);
        ev.target_output_len = lengths.uniform_int(config.output_min, config.output_max);
        ev.prompt = make_topic_prompt(ev.intended_adapter, prompt_len, config.vocab_size, config.n, fillers);

        if (explicit_coin.uniform() < config.explicit_fraction) {
            ev.explicit_adapter = ev.intended_adapter;
        }
        trace.push_back(std::move(ev));
    }
    return trace;
}

void write_trace(const std::string & path, const std::vector<TraceEvent> & trace) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write trace file: " + path);
    }
    for (const TraceEvent & ev : trace) {
        char head[64];
        std::snprintf(head, sizeof(head), "%.3f", ev.arrival_ms);
        out << head << '|';
        for (size_t i = 0; i < ev.prompt.size(); ++i) {
            if (i > 0) {
                out << ' ';
            }
            out << ev.prompt[i];
        }
        out << '|' << ev.intended_adapter << '|';
        if (ev.explicit_adapter) {
            out << *ev.explicit_adapter;
        } else {
            out << '-';
        }
        out << '|' << ev.target_output_len << '\n';
    }
    if (!out) {
        throw IoError("short write: " + path);
    }
}

std::vector<TraceEvent> read_trace(const std::string & path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open trace file: " + path);
    }
    std::vector<TraceEvent> trace;
    std::string             line;
    int                     line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream        ss(line);
        std::string              field;
        while (std::getline(ss, field, '|')) {
            fields.push_back(field);
        }
        const std::string where = path + ":" + std::to_string(line_no);
        if (fields.size() != 5) {
            throw FormatError("bad trace record at " + where);
        }
        try {
            TraceEvent ev;
            ev.arrival_ms = std::stod(fields[0]);
            std::stringstream ps(fields[1]);
            int               tok;
            while (ps >> tok) {
                ev.prompt.push_back(tok);
            }
            if (ev.prompt.empty()) {
                throw FormatError("empty prompt");
            }
            ev.intended_adapter = std::stoi(fields[2]);
            if (fields[3] != "-") {
                ev.explicit_adapter = std::stoi(fields[3]);
            }
            ev.target_output_len = std::stoi(fields[4]);
            if (!trace.empty() && ev.arrival_ms < trace.back().arrival_ms) {
                throw FormatError("arrival times decrease");
            }
            trace.push_back(std::move(ev));
        } catch (const FormatError &) {
            throw FormatError("bad trace record at " + where);
        } catch (const std::exception &) {
            throw FormatError("bad trace record at " + where);
        }
    }
    return trace;
}

}  // namespace loraserve
