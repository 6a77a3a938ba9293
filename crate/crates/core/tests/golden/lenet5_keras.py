"""Keras model generated by darviz from "lenet5"."""

from tensorflow import keras
from tensorflow.keras import layers


def build_model():
    input_ = layers.Input(shape=(32, 32, 1), name="input_")
    conv1 = layers.Conv2D(6, (5, 5), strides=(1, 1), padding="valid", activation="tanh", name="conv1")(input_)
    pool1 = layers.AveragePooling2D(pool_size=(2, 2), strides=(2, 2), padding="valid", name="pool1")(conv1)
    conv2 = layers.Conv2D(16, (5, 5), strides=(1, 1), padding="valid", activation="tanh", name="conv2")(pool1)
    pool2 = layers.AveragePooling2D(pool_size=(2, 2), strides=(2, 2), padding="valid", name="pool2")(conv2)
    flatten = layers.Flatten(name="flatten")(pool2)
    fc1 = layers.Dense(120, activation="tanh", name="fc1")(flatten)
    fc2 = layers.Dense(84, activation="tanh", name="fc2")(fc1)
    fc3 = layers.Dense(10, name="fc3")(fc2)
    prob = layers.Softmax(axis=-1, name="prob")(fc3)
    return keras.Model(inputs=input_, outputs=prob, name="lenet5")


if __name__ == "__main__":
    build_model().summary()
