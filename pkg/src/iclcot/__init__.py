"""In-context learning of function classes with automatic chain-of-thought
demonstration augmentation, pruning, selection and averaged inference."""

__version__ = "0.1.0"

from .rng import RngState, gaussian_sample, stream_for
from .numerics import matmul, relu, softmax
from .autodiff import GradientTape, Tensor, backward
from .optim import AdamState, adam_step
from .tasks import (
    LinearTask,
    Prompt,
    Relu2NNTask,
    fresh_eval_task,
    sample_linear_task,
    sample_prompt,
    sample_relu2nn_task,
    task_eval,
)
from .oracles import (
    ChainTrace,
    chain_trace,
    expected_policy_gradient_bruteforce,
    finite_difference_grads,
    least_squares_fit,
)
from .model import (
    ModelConfig,
    TrainConfig,
    TransformerModel,
    TransformerWeights,
    embed_prompt,
    forward_predict,
    init_weights,
    param_count,
    train,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .autocot import (
    Demonstration,
    DemoPool,
    PipelineConfig,
    SelectionPolicy,
    augment,
    autocot_query_loss,
    inference,
    policy_gradient,
    prune,
    run_pipeline,
    select_train,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    auc_binarized,
    compare,
    mse_normalized,
    run_eval,
    sign_test_pvalue,
)
from .llm import (
    LlmClient,
    LlmEndpointConfig,
    MockCompletionsTransport,
    ReplayTransport,
    ScoredContinuation,
    load_dataset,
    text_pipeline_eval,
)

__all__ = [name for name in dir() if not name.startswith("_")]
