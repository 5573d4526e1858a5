import numpy as np


def db_to_linear(value_db: float) -> float:
    """
    Convert a power ratio from decibels to linear scale

    Args:
        value_db (float): Ratio in dB

    Returns:
        float: Linear ratio
    """
    return float(10.0 ** (value_db / 10.0))


def linear_to_db(value: float) -> float:
    """
    Convert a linear power ratio to decibels

    Args:
        value (float): Linear ratio (must be positive; 0 maps to -inf)

    Returns:
        float: Ratio in dB
    """
    if value <= 0:
        return float("-inf")
    return float(10.0 * np.log10(value))


def dbm_to_watts(value_dbm: float) -> float:
    """
    Convert an absolute power from dBm to watts

    Args:
        value_dbm (float): Power in dBm

    Returns:
        float: Power in W
    """
    return float(10.0 ** ((value_dbm - 30.0) / 10.0))

