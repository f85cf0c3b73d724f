import numpy as np
import pytest

from adacoreset.models import Dataset, Model


class TableModel(Model):
    """Test stub: per-datum log-likelihoods read from a fixed table.

    Parameter vectors are 1-d; theta[0] is interpreted as a column index
    into the table, so tests can script exact log-likelihood values.
    """

    kind = "table"

    def __init__(self, table, log_prior_value=0.0):
        self.table = np.asarray(table, dtype=np.float64)
        dataset = Dataset(np.zeros((self.table.shape[0], 1)))
        super().__init__(dataset)
        self.dim = 1
        self.prior_value = log_prior_value

    def log_lik_block(self, indices, thetas):
        thetas = np.atleast_2d(thetas)
        cols = thetas[:, 0].astype(int)
        return self.table[np.asarray(indices, dtype=np.intp)][:, cols]

    def _log_prior_block(self, thetas):
        return np.full(np.atleast_2d(thetas).shape[0], self.prior_value)


@pytest.fixture
def table_model():
    return TableModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
