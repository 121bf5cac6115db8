from prometheus_client import Counter, Histogram

gradient_steps_counter = Counter("bridgecraft_gradient_steps_total", "Gradient steps applied")
diverged_batches_counter = Counter("bridgecraft_diverged_batches_total", "Batches skipped after a non-finite rollout")
skipped_updates_counter = Counter("bridgecraft_skipped_updates_total", "Updates skipped for non-finite gradients")
evaluations_counter = Counter("bridgecraft_evaluations_total", "Periodic evaluations run")
bound_violations_counter = Counter("bridgecraft_bound_violations_total", "Evaluations whose log Z lower bound exceeded the reference")
step_latency = Histogram("bridgecraft_step_latency_seconds", "Wall time of one gradient step")
