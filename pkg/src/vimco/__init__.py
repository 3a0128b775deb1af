from .core import log_sum_exp, softmax_from_logs
