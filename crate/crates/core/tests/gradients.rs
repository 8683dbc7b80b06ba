#[path = "support/grad_suite.rs"]
#[allow(dead_code)]
mod grad_suite;

macro_rules! suite {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                grad_suite::$name();
            }
        )*
    };
}

suite!(
    matmul,
    add_sub_mul_with_broadcast,
    pointwise,
    softmax_and_log_softmax_any_axis,
    concat_and_slice,
    embeddings_pick_and_reductions,
    layer_norm,
    attention_all_masks,
    causal_attention_matches_loop_oracle,
    gru_zero_weights_halves_state,
    gru_matches_loop_oracle,
    gru_chain_of_five_cells,
    straight_through_passes_gradient,
    init_is_seeded,
    game_loss_full,
    transformer_lm_loss,
    gru_lm_loss,
    seq2seq_loss,
);
