__all__ = ["SparseAutoencoder", "train_sae", "attribute", "integrated_gradients", "select_top_neurons", "synthesize"]
from .sae import SparseAutoencoder, train_sae
from .attribution import attribute, integrated_gradients, select_top_neurons
from .featviz import synthesize
