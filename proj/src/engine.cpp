#include "loraserve/engine.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace loraserve {

const char * to_string(EngineMode mode) {
    return mode == EngineMode::EdgeLora ? "edgelora" : "sequential_baseline";
}

EngineMode engine_mode_from_string(const std::string & name) {
    if (name == "edgelora") {
        return EngineMode::EdgeLora;
    }
    if (name == "sequential_baseline") {
        return EngineMode::SequentialBaseline;
    }
    throw ConfigError("unknown engine mode: " + name);
}

namespace cost {

double token_base(const ToyModelConfig & m) {
    const double d = m.hidden_dim;
    const double v = m.vocab_size;
    const double l = m.num_layers;
    return d + l * (d * d + d) + d * v + v;
}

double token_lora(const ToyModelConfig & m, int rank) {
    const double d = m.hidden_dim;
    return double(m.num_layers) * (2.0 * double(rank) * d + d);
}

double merge_once(const ToyModelConfig & m, int rank) {
    const double d = m.hidden_dim;
    return double(m.num_layers) * (double(rank) * d * d + d * d);
}

double adapter_load(const ToyModelConfig & m, int rank, double units_per_value) {
    return 2.0 * double(m.num_layers) * double(rank) * double(m.hidden_dim) * units_per_value;
}

double selection(const ToyModelConfig & m, int prompt_len, int adapter_count, int feature_dim) {
    return double(prompt_len) * token_base(m) + double(adapter_count) * double(feature_dim);
}

}  // namespace cost

Request Engine::request_from_event(const TraceEvent & event, EngineMode mode) {
    Request req;
    req.arrival_ms       = event.arrival_ms;
    req.prompt           = event.prompt;
    req.explicit_adapter = event.explicit_adapter;
    req.max_new_tokens   = std::max(1, event.target_output_len);
    if (mode == EngineMode::SequentialBaseline && !req.explicit_adapter) {
        // the baseline has no selection mechanism; the trace's ground-truth
        // adapter stands in for the user's manual choice
        req.explicit_adapter = event.intended_adapter;
    }
    return req;
}

Engine::Engine(const ToyBaseModel & model, const AdapterRegistry & registry, RouterModel router,
               const EngineConfig & config)
    : model_(model), registry_(registry), router_(std::move(router)), config_(config) {
    if (config_.gamma < 1) {
        throw ConfigError("engine needs at least one slot");
    }
    if (config_.mode == EngineMode::EdgeLora) {
        pool_ = std::make_unique<MemoryPool>(config_.cache_capacity, registry_.hidden_dim(), registry_.rank(),
                                             registry_.num_layers());
        cache_ = std::make_unique<AdapterCache>(config_.cache_capacity, *pool_, registry_);
        if (config_.prefill) {
            cache_->prefill(config_.prefill_seed);
        }
    } else {
        if (registry_.count() > config_.memory_budget_adapters) {
            throw CapacityError("cannot preload " + std::to_string(registry_.count()) +
                                " adapters with a budget of " +
                                std::to_string(config_.memory_budget_adapters));
        }
        preloaded_.reserve(size_t(registry_.count()));
        for (int id = 0; id < registry_.count(); ++id) {
            preloaded_.push_back(registry_.load(id));
        }
        merged_model_ = model_;
    }

    slots_.resize(size_t(config_.gamma));
    for (int i = 0; i < config_.gamma; ++i) {
        slots_[size_t(i)].slot_id = i;
    }
}

double Engine::now_ms() const {
    if (config_.virtual_clock) {
        return virtual_now_ms_.load(std::memory_order_relaxed);
    }
    const auto elapsed = std::chrono::steady_clock::now() - epoch_;
    return std::chrono::duration<double, std::milli>(elapsed).count();
}

void Engine::advance_clock_units(double units) {
    if (config_.virtual_clock && units > 0.0) {
        virtual_now_ms_.store(now_ms() + units / config_.units_per_ms, std::memory_order_relaxed);
    }
}

void Engine::advance_clock_to(double t_ms) {
    if (config_.virtual_clock) {
        if (t_ms > now_ms()) {
            virtual_now_ms_.store(t_ms, std::memory_order_relaxed);
        }
    } else {
        const double wait = t_ms - now_ms();
        if (wait > 0.0) {
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(wait));
        }
    }
}

void Engine::bind_slot(Slot & slot, Request request) {
    slot.state              = SlotState::AdapterSelection;
    slot.request            = std::move(request);
    slot.bind_seq           = bind_counter_++;
    slot.adapter_id         = kNoAdapter;
    slot.kind               = SelectionKind::Explicit;
    slot.selection_resolved = false;
    slot.pending_adapter    = kNoAdapter;
    slot.handle.release();
    slot.adapter = nullptr;
    slot.cursor  = 0;
    slot.decode  = {};
    slot.last_token = -1;
    slot.output.clear();
    slot.selection_done_ms = -1.0;
    slot.first_token_ms    = -1.0;
}

long Engine::submit(Request request) {
    return submit(std::move(request), nullptr);
}

long Engine::submit(Request request, CompletionCallback callback) {
    std::lock_guard<std::mutex> lock(mtx_);
    if (shutdown_.load()) {
        throw RejectedError(RejectedError::Reason::Shutdown, "engine is shut down");
    }
    if (request.prompt.empty()) {
        throw InputError("request prompt is empty");
    }
    if (request.max_new_tokens < 1) {
        throw InputError("max_new_tokens must be >= 1");
    }
    request.id = next_id_.fetch_add(1);
    if (request.arrival_ms < 0.0) {
        request.arrival_ms = now_ms();
    }
    if (callback) {
        callbacks_.emplace(request.id, std::move(callback));
    }

    const long id = request.id;
    for (Slot & slot : slots_) {
        if (slot.state == SlotState::Idle) {
            bind_slot(slot, std::move(request));
            return id;
        }
    }
    if (queue_.size() >= config_.queue_bound) {
        callbacks_.erase(id);
        throw RejectedError(RejectedError::Reason::Saturated, "request queue is full");
    }
    queue_.push_back(std::move(request));
    return id;
}

void Engine::fail_slot(Slot & slot, const std::string & error, Pending & pending) {
    CompletionRecord rec;
    rec.request_id     = slot.request.id;
    rec.adapter_used   = slot.adapter_id;
    rec.selection_kind = slot.kind;
    rec.arrival_ms     = slot.request.arrival_ms;
    rec.first_token_ms = now_ms();
    rec.completion_ms  = now_ms();
    rec.failed         = true;
    rec.error          = error;

    CompletionCallback cb;
    auto               it = callbacks_.find(slot.request.id);
    if (it != callbacks_.end()) {
        cb = std::move(it->second);
        callbacks_.erase(it);
    }
    {
        std::lock_guard<std::mutex> rlock(records_mtx_);
        records_.push_back(rec);
    }
    pending.emplace_back(std::move(rec), std::move(cb));

    slot.handle.release();
    slot.adapter = nullptr;
    slot.state   = SlotState::Idle;
}

void Engine::complete_slot(Slot & slot, Pending & pending) {
    CompletionRecord rec;
    rec.request_id     = slot.request.id;
    rec.adapter_used   = slot.adapter_id;
    rec.selection_kind = slot.kind;
    rec.arrival_ms     = slot.request.arrival_ms;
    rec.first_token_ms = slot.first_token_ms;
    rec.completion_ms  = now_ms();
    rec.tokens         = slot.output;

    CompletionCallback cb;
    auto               it = callbacks_.find(slot.request.id);
    if (it != callbacks_.end()) {
        cb = std::move(it->second);
        callbacks_.erase(it);
    }
    {
        std::lock_guard<std::mutex> rlock(records_mtx_);
        records_.push_back(rec);
    }
    pending.emplace_back(std::move(rec), std::move(cb));

    slot.handle.release();
    slot.adapter = nullptr;
    slot.state   = SlotState::Idle;
}

void Engine::rebind_from_queue() {
    for (Slot & slot : slots_) {
        if (queue_.empty()) {
            break;
        }
        if (slot.state == SlotState::Idle) {
            bind_slot(slot, std::move(queue_.front()));
            queue_.pop_front();
        }
    }
}

double Engine::selection_units(int prompt_len) const {
    return cost::selection(model_.config, prompt_len, registry_.count(), router_.feature_dim);
}

void Engine::baseline_switch_to(int adapter_id, StepReport & report, double & units) {
    if (merged_id_ == adapter_id) {
        return;
    }
    auto apply = [&](const FullAdapter & adapter, double sign) {
        for (int l = 0; l < model_.config.num_layers; ++l) {
            const LoraPair & p     = adapter.pairs[size_t(l)];
            const Matrix     delta = matmul(p.b, p.a);
            Matrix &         w     = merged_model_.layers[size_t(l)];
            for (size_t i = 0; i < w.data.size(); ++i) {
                w.data[i] += sign * p.scale * delta.data[i];
            }
        }
        ++report.merges;
        units += cost::merge_once(model_.config, adapter.rank);
    };
    if (merged_id_ != kNoAdapter) {
        apply(preloaded_[size_t(merged_id_)], -1.0);
    }
    apply(preloaded_[size_t(adapter_id)], 1.0);
    merged_id_ = adapter_id;
}

void Engine::run_selection_phase(double & units, Pending & pending) {
    for (Slot & slot : slots_) {
        if (slot.state != SlotState::AdapterSelection) {
            continue;
        }
        if (config_.mode == EngineMode::SequentialBaseline) {
            if (!slot.request.explicit_adapter) {
                fail_slot(slot, "baseline mode requires an explicit adapter id", pending);
                continue;
            }
            const int id = *slot.request.explicit_adapter;
            if (!registry_.valid_id(id)) {
                fail_slot(slot, "unknown adapter id " + std::to_string(id), pending);
                continue;
            }
            slot.adapter_id = id;
            slot.kind       = SelectionKind::Explicit;
            slot.adapter    = &preloaded_[size_t(id)];
            slot.state      = SlotState::PromptProcessing;
            slot.selection_done_ms = -2.0;  // stamp after the clock advances
            continue;
        }

        if (!slot.selection_resolved) {
            try {
                if (slot.request.explicit_adapter) {
                    const int id = *slot.request.explicit_adapter;
                    if (!registry_.valid_id(id)) {
                        throw LookupError("unknown adapter id " + std::to_string(id));
                    }
                    slot.pending_adapter = id;
                    slot.kind            = SelectionKind::Explicit;
                } else {
                    const Selection sel = select_adapter(std::nullopt, router_, slot.request.prompt, *cache_,
                                                         config_.selection);
                    slot.pending_adapter = sel.adapter_id;
                    slot.kind            = sel.kind;

                    // the scorer shares the base model, so picking an adapter
                    // costs one pass of the prompt through the base weights;
                    // run it for real and bill it to this slot's step
                    const std::vector<int> base_only(slot.request.prompt.size(), kNoAdapter);
                    forward_token_batch(model_, {}, base_only, slot.request.prompt);
                    units += selection_units(int(slot.request.prompt.size()));
                }
                slot.selection_resolved = true;
            } catch (const std::exception & e) {
                fail_slot(slot, e.what(), pending);
                continue;
            }
        }

        try {
            const long    loads_before = cache_->disk_loads();
            AdapterHandle handle       = cache_->get(slot.pending_adapter);
            if (!handle.valid()) {
                // every block is pinned right now; try again next step
                continue;
            }
            if (cache_->disk_loads() > loads_before) {
                units += cost::adapter_load(model_.config, registry_.rank(), config_.load_units_per_value);
            }
            slot.adapter_id = slot.pending_adapter;
            slot.handle     = std::move(handle);
            slot.adapter    = slot.handle.get();
            slot.state      = SlotState::PromptProcessing;
            slot.selection_done_ms = -2.0;
        } catch (const std::exception & e) {
            fail_slot(slot, e.what(), pending);
        }
    }
}

bool Engine::has_active_locked() const {
    for (const Slot & slot : slots_) {
        if (slot.state != SlotState::Idle) {
            return true;
        }
    }
    return false;
}

StepReport Engine::step() {
    Pending    pending;
    StepReport report;
    {
        std::lock_guard<std::mutex> lock(mtx_);
        report = step_locked(pending);
    }
    for (auto & [record, callback] : pending) {
        if (callback) {
            callback(record);
        }
    }
    return report;
}

StepReport Engine::step_locked(Pending & pending) {
    StepReport report;
    if (!has_active_locked() && queue_.empty()) {
        return report;
    }
    rebind_from_queue();

    double units = 0.0;
    run_selection_phase(units, pending);

    // gather one pending token per slot that computes this step
    std::vector<Slot *> batch_slots;
    std::vector<int>    tokens;
    std::vector<int>    assignments;
    AdapterMap          adapter_map;

    if (config_.mode == EngineMode::EdgeLora) {
        for (Slot & slot : slots_) {
            if (slot.state != SlotState::PromptProcessing && slot.state != SlotState::Generation) {
                continue;
            }
            batch_slots.push_back(&slot);
            tokens.push_back(slot.state == SlotState::PromptProcessing
                                 ? slot.request.prompt[size_t(slot.cursor)]
                                 : slot.last_token);
            assignments.push_back(slot.adapter_id);
            adapter_map.emplace(slot.adapter_id, slot.adapter);
            units += cost::token_base(model_.config) + cost::token_lora(model_.config, registry_.rank());
        }
    } else {
        // only requests sharing the oldest active request's adapter batch
        const Slot * oldest = nullptr;
        for (const Slot & slot : slots_) {
            if (slot.state != SlotState::PromptProcessing && slot.state != SlotState::Generation) {
                continue;
            }
            if (oldest == nullptr || slot.bind_seq < oldest->bind_seq) {
                oldest = &slot;
            }
        }
        if (oldest != nullptr) {
            baseline_switch_to(oldest->adapter_id, report, units);
            for (Slot & slot : slots_) {
                if (slot.state != SlotState::PromptProcessing && slot.state != SlotState::Generation) {
                    continue;
                }
                if (slot.adapter_id != merged_id_) {
                    continue;
                }
                batch_slots.push_back(&slot);
                tokens.push_back(slot.state == SlotState::PromptProcessing
                                     ? slot.request.prompt[size_t(slot.cursor)]
                                     : slot.last_token);
                assignments.push_back(kNoAdapter);  // merged weights carry the delta
                units += cost::token_base(model_.config);
            }
        }
    }

    TokenBatchResult result;
    if (!batch_slots.empty()) {
        const ToyBaseModel & active_model =
            config_.mode == EngineMode::EdgeLora ? model_ : merged_model_;
        result = forward_token_batch(active_model, adapter_map, assignments, tokens);

        report.tokens = int(batch_slots.size());
        if (config_.mode == EngineMode::EdgeLora) {
            report.ubatches = int(group_by_adapter(assignments).size());
        } else {
            report.ubatches = 1;
        }
    }

    units += config_.step_overhead_units;
    advance_clock_units(units);
    report.cost_units = units;

    // stamp selections that finished this step
    for (Slot & slot : slots_) {
        if (slot.selection_done_ms == -2.0) {
            slot.selection_done_ms = now_ms();
        }
    }

    for (size_t i = 0; i < batch_slots.size(); ++i) {
        Slot & slot = *batch_slots[i];
        slot.decode.hidden = column(result.hidden, int(i));
        if (slot.state == SlotState::PromptProcessing) {
            slot.last_token = tokens[i];
            ++slot.cursor;
            if (slot.cursor >= int(slot.request.prompt.size())) {
                slot.state = SlotState::Generation;
            }
        } else {
            const int produced = result.next_tokens[i];
            slot.output.push_back(produced);
            ++slot.decode.tokens_emitted;
            slot.last_token = produced;
            if (slot.first_token_ms < 0.0) {
                slot.first_token_ms = now_ms();
            }
            if (int(slot.output.size()) >= slot.request.max_new_tokens ||
                produced == model_.config.eos_token) {
                complete_slot(slot, pending);
                ++report.completions;
            }
        }
    }

    rebind_from_queue();
    return report;
}

std::vector<CompletionRecord> Engine::run_until_drain(const std::vector<TraceEvent> & trace) {
    size_t records_before;
    {
        std::lock_guard<std::mutex> rlock(records_mtx_);
        records_before = records_.size();
    }

    size_t next = 0;
    for (;;) {
        while (next < trace.size() && trace[next].arrival_ms <= now_ms() + 1e-9) {
            submit(request_from_event(trace[next], config_.mode));
            ++next;
        }
        bool idle;
        {
            std::lock_guard<std::mutex> lock(mtx_);
            idle = !has_active_locked() && queue_.empty();
        }
        if (idle) {
            if (next >= trace.size()) {
                break;
            }
            advance_clock_to(trace[next].arrival_ms);
            continue;
        }
        step();
    }

    std::vector<CompletionRecord> out;
    {
        std::lock_guard<std::mutex> rlock(records_mtx_);
        out.assign(records_.begin() + long(records_before), records_.end());
    }
    std::stable_sort(out.begin(), out.end(), [](const CompletionRecord & a, const CompletionRecord & b) {
        return a.completion_ms < b.completion_ms;
    });
    return out;
}

void Engine::shutdown() {
    shutdown_.store(true);
}

bool Engine::has_work() const {
    std::lock_guard<std::mutex> lock(mtx_);
    return has_active_locked() || !queue_.empty();
}

double Engine::cache_hit_rate() const {
    std::lock_guard<std::mutex> lock(mtx_);
    return cache_ ? cache_->hit_rate() : 0.0;
}

EngineSnapshot Engine::snapshot() const {
    EngineSnapshot snap;
    {
        std::lock_guard<std::mutex> lock(mtx_);
        for (const Slot & slot : slots_) {
            if (slot.state == SlotState::Idle) {
                ++snap.idle_slots;
            } else {
                ++snap.active_slots;
            }
        }
        snap.queue_depth = queue_.size();
        snap.now_ms      = now_ms();
    }
    {
        std::lock_guard<std::mutex> rlock(records_mtx_);
        snap.completed = long(records_.size());
    }
    return snap;
}

std::vector<CompletionRecord> Engine::completed_records() const {
    std::lock_guard<std::mutex> rlock(records_mtx_);
    return records_;
}

}  // namespace loraserve
