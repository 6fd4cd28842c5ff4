mod common;

use common::checks;
use crossview::objectives::Architecture;

#[test]
fn forked_trunk_gradient_is_the_sum_of_head_paths_and_matches_finite_differences() {
    assert!(checks::forked_trunk_gradient_is_the_sum_of_head_paths() >= 5);
}

#[test]
fn sequential_first_stage_learns_from_second_stage_losses_alone() {
    checks::sequential_first_stage_learns_from_second_stage_losses_alone();
}

#[test]
fn sequential_stage_one_alone_matches_the_baseline_gradient() {
    checks::sequential_stage_one_alone_matches_the_baseline_gradient();
}

#[test]
fn discriminator_and_generator_steps_touch_only_their_own_parameters() {
    checks::discriminator_and_generator_steps_touch_only_their_own_parameters();
}

#[test]
fn full_step_updates_every_network() {
    checks::full_step_updates_every_network();
}

#[test]
fn discriminator_loss_at_one_half_is_two_ln_two() {
    checks::discriminator_loss_at_one_half();
}

#[test]
fn fork_without_seg_l1_equals_baseline() {
    checks::fork_without_seg_l1_equals_baseline();
}

#[test]
fn lambda_scales_the_l1_gradient() {
    for arch in [Architecture::Baseline, Architecture::Fork] {
        checks::lambda_scales_the_l1_gradient(arch);
    }
}
