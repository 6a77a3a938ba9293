"""Keras model generated by darviz from "inception_block"."""

from tensorflow import keras
from tensorflow.keras import layers


def build_model():
    input_ = layers.Input(shape=(28, 28, 192), name="input_")
    b1_1x1 = layers.Conv2D(64, (1, 1), strides=(1, 1), padding="valid", activation="relu", name="b1_1x1")(input_)
    b2_reduce = layers.Conv2D(96, (1, 1), strides=(1, 1), padding="valid", activation="relu", name="b2_reduce")(input_)
    b2_3x3 = layers.Conv2D(128, (3, 3), strides=(1, 1), padding="same", activation="relu", name="b2_3x3")(b2_reduce)
    b3_reduce = layers.Conv2D(16, (1, 1), strides=(1, 1), padding="valid", activation="relu", name="b3_reduce")(input_)
    b3_5x5 = layers.Conv2D(32, (5, 5), strides=(1, 1), padding="same", activation="relu", name="b3_5x5")(b3_reduce)
    b4_pool = layers.MaxPooling2D(pool_size=(3, 3), strides=(1, 1), padding="same", name="b4_pool")(input_)
    b4_proj = layers.Conv2D(32, (1, 1), strides=(1, 1), padding="valid", activation="relu", name="b4_proj")(b4_pool)
    concat = layers.Concatenate(axis=-1, name="concat")([b1_1x1, b2_3x3, b3_5x5, b4_proj])
    return keras.Model(inputs=input_, outputs=concat, name="inception_block")


if __name__ == "__main__":
    build_model().summary()
